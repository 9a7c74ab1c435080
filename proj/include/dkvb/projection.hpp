#ifndef DKVB_PROJECTION_HPP
#define DKVB_PROJECTION_HPP

#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace dkvb {

/// A bank of per-head random projections. Each head c owns a fixed Gaussian
/// matrix of shape d_key x m_z drawn once from the seed and never trained.
/// In identity mode no matrices are stored and inputs pass through unchanged
/// (requires d_key == m_z); this is the low-dimensional bypass used when the
/// input space itself is the key space.
struct ProjectionBank {
    std::vector<Eigen::MatrixXf> matrices;  // C matrices, d_key x m_z each
    std::uint64_t seed = 0;
    int C = 0;
    int d_key = 0;
    int m_z = 0;
    bool identity = false;
};

/// Draw C independent projection matrices with i.i.d. N(0, 1/d_key) entries.
ProjectionBank build_projection_bank(int C, int d_key, int m_z,
                                     std::uint64_t seed);

/// Identity bank: every head sees the raw input (d_key == m_z == d).
ProjectionBank identity_projection_bank(int C, int d);

/// Project one input into every head's key space. Returns d_key x C, one
/// column per head, computed in double.
Eigen::MatrixXd project(const ProjectionBank& bank, const Eigen::VectorXd& z);

/// Project a batch (m_z x B) through head c only. Returns d_key x B.
Eigen::MatrixXd project_head(const ProjectionBank& bank, int c,
                             const Eigen::MatrixXd& Z);

}  // namespace dkvb

#endif  // DKVB_PROJECTION_HPP
