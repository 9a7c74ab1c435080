#include "dkvb/projection.hpp"

#include <cmath>
#include <string>

#include "dkvb/common.hpp"

namespace dkvb {

ProjectionBank build_projection_bank(int C, int d_key, int m_z,
                                     std::uint64_t seed) {
    if (C <= 0 || d_key <= 0 || m_z <= 0) {
        throw ConfigError("build_projection_bank: C, d_key, m_z must be positive");
    }
    ProjectionBank bank;
    bank.seed = seed;
    bank.C = C;
    bank.d_key = d_key;
    bank.m_z = m_z;
    bank.identity = false;
    bank.matrices.reserve(static_cast<std::size_t>(C));
    const double std_dev = 1.0 / std::sqrt(static_cast<double>(d_key));
    for (int c = 0; c < C; ++c) {
        Rng rng(derive_seed(seed, "projection:" + std::to_string(c)));
        Eigen::MatrixXf P(d_key, m_z);
        float* p = P.data();
        const Eigen::Index n = P.size();
        for (Eigen::Index i = 0; i < n; ++i) {
            p[i] = static_cast<float>(rng.gaussian() * std_dev);
        }
        bank.matrices.push_back(std::move(P));
    }
    return bank;
}

ProjectionBank identity_projection_bank(int C, int d) {
    if (C <= 0 || d <= 0) {
        throw ConfigError("identity_projection_bank: C and d must be positive");
    }
    ProjectionBank bank;
    bank.C = C;
    bank.d_key = d;
    bank.m_z = d;
    bank.identity = true;
    return bank;
}

Eigen::MatrixXd project(const ProjectionBank& bank, const Eigen::VectorXd& z) {
    if (z.size() != bank.m_z) {
        throw ShapeError("project: input has size " + std::to_string(z.size()) +
                         ", bank expects " + std::to_string(bank.m_z));
    }
    if (!z.allFinite()) {
        throw DataError("project: non-finite embedding");
    }
    Eigen::MatrixXd out(bank.d_key, bank.C);
    if (bank.identity) {
        for (int c = 0; c < bank.C; ++c) out.col(c) = z;
        return out;
    }
    for (int c = 0; c < bank.C; ++c) {
        out.col(c) =
            bank.matrices[static_cast<std::size_t>(c)].cast<double>() * z;
    }
    return out;
}

Eigen::MatrixXd project_head(const ProjectionBank& bank, int c,
                             const Eigen::MatrixXd& Z) {
    if (c < 0 || c >= bank.C) {
        throw ShapeError("project_head: head index out of range");
    }
    if (Z.rows() != bank.m_z) {
        throw ShapeError("project_head: batch has " + std::to_string(Z.rows()) +
                         " rows, bank expects " + std::to_string(bank.m_z));
    }
    if (!Z.allFinite()) {
        throw DataError("project_head: non-finite embeddings");
    }
    if (bank.identity) {
        return Z;
    }
    return bank.matrices[static_cast<std::size_t>(c)].cast<double>() * Z;
}

}  // namespace dkvb
