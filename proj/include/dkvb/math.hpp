#ifndef DKVB_MATH_HPP
#define DKVB_MATH_HPP

#include <Eigen/Core>

namespace dkvb {

/// Numerically stable softmax (max-subtraction), computed in double.
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

/// One-hot target smoothed by eps: the true class gets 1 - eps + eps/n,
/// every other class gets eps/n. Rows sum to 1 for any eps in [0, 1).
Eigen::VectorXd smoothed_target(int label, int num_classes, double eps);

/// Cross-entropy of probs against a smoothed one-hot target. Probabilities
/// are clamped at 1e-12 before the log so all-but-certain mistakes stay
/// finite.
double ce_loss_smoothed(const Eigen::VectorXd& probs, int label, double eps);

/// Index of the largest entry; ties go to the lowest index.
int argmax_lowest(const Eigen::VectorXd& v);

}  // namespace dkvb

#endif  // DKVB_MATH_HPP
