#include "dkvb/math.hpp"

#include <algorithm>
#include <cmath>

#include "dkvb/common.hpp"

namespace dkvb {

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    if (logits.size() == 0) {
        throw ShapeError("softmax: empty logits");
    }
    const double m = logits.maxCoeff();
    Eigen::VectorXd e = (logits.array() - m).exp();
    return e / e.sum();
}

Eigen::VectorXd smoothed_target(int label, int num_classes, double eps) {
    if (label < 0 || label >= num_classes) {
        throw DataError("smoothed_target: label out of range");
    }
    Eigen::VectorXd t =
        Eigen::VectorXd::Constant(num_classes, eps / num_classes);
    t[label] += 1.0 - eps;
    return t;
}

double ce_loss_smoothed(const Eigen::VectorXd& probs, int label, double eps) {
    const int n = static_cast<int>(probs.size());
    const Eigen::VectorXd t = smoothed_target(label, n, eps);
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        loss -= t[i] * std::log(std::max(probs[i], 1e-12));
    }
    return loss;
}

int argmax_lowest(const Eigen::VectorXd& v) {
    if (v.size() == 0) {
        throw ShapeError("argmax_lowest: empty vector");
    }
    int best = 0;
    for (int i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

}  // namespace dkvb
