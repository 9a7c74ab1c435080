#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "dkvb/common.hpp"
#include "dkvb/projection.hpp"
#include "helpers.hpp"

using namespace dkvb;
using testutil::same_bits;

TEST_CASE("bank construction is deterministic in the seed") {
    const ProjectionBank a = build_projection_bank(5, 7, 13, 42);
    const ProjectionBank b = build_projection_bank(5, 7, 13, 42);
    const ProjectionBank c = build_projection_bank(5, 7, 13, 43);
    REQUIRE(a.matrices.size() == 5);
    bool any_differs = false;
    for (int i = 0; i < 5; ++i) {
        CHECK(same_bits(a.matrices[i], b.matrices[i]));
        any_differs = any_differs || !same_bits(a.matrices[i], c.matrices[i]);
    }
    CHECK(any_differs);
}

TEST_CASE("heads are statistically N(0, 1/d_key)") {
    const int d_key = 8;
    const ProjectionBank bank = build_projection_bank(4, d_key, 2000, 7);
    double sum = 0.0, sq = 0.0;
    std::int64_t n = 0;
    for (const auto& m : bank.matrices) {
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            const double x = m.data()[i];
            sum += x;
            sq += x * x;
            ++n;
        }
    }
    const double mean = sum / static_cast<double>(n);
    const double var = sq / static_cast<double>(n) - mean * mean;
    CHECK(std::abs(mean) < 0.01);
    CHECK(var == doctest::Approx(1.0 / d_key).epsilon(0.05));
}

TEST_CASE("projection is linear") {
    const ProjectionBank bank = build_projection_bank(3, 5, 24, 11);
    Rng rng(99);
    for (int trial = 0; trial < 120; ++trial) {
        Eigen::VectorXd x(24), y(24);
        for (int i = 0; i < 24; ++i) {
            x[i] = rng.gaussian();
            y[i] = rng.gaussian();
        }
        const double a = rng.gaussian(), b = rng.gaussian();
        const Eigen::MatrixXd lhs = project(bank, (a * x + b * y).eval());
        const Eigen::MatrixXd rhs = a * project(bank, x) + b * project(bank, y);
        CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("kernel perturbations leave the head still") {
    const int d_key = 4, m_z = 16;
    const ProjectionBank bank = build_projection_bank(2, d_key, m_z, 3);
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const int c = trial % 2;
        const Eigen::MatrixXd P = bank.matrices[c].cast<double>();
        // Orthogonalize a random vector against the rows (Gram-Schmidt on
        // the row space), leaving a kernel direction.
        Eigen::MatrixXd rows = P;
        for (int r = 0; r < d_key; ++r) {
            for (int s = 0; s < r; ++s) {
                rows.row(r) -= rows.row(s).dot(rows.row(r)) * rows.row(s);
            }
            rows.row(r).normalize();
        }
        Eigen::VectorXd v(m_z), z(m_z);
        for (int i = 0; i < m_z; ++i) {
            v[i] = rng.gaussian();
            z[i] = rng.gaussian();
        }
        for (int r = 0; r < d_key; ++r) {
            v -= rows.row(r).dot(v) * rows.row(r).transpose();
        }
        const Eigen::MatrixXd before = project(bank, z);
        const Eigen::MatrixXd after = project(bank, (z + v).eval());
        CHECK((after.col(c) - before.col(c)).cwiseAbs().maxCoeff() <
              1e-9 * (1.0 + v.norm()));
    }
}

TEST_CASE("identity bank passes inputs through untouched") {
    const ProjectionBank bank = identity_projection_bank(3, 6);
    Eigen::VectorXd z(6);
    z << 0.25, -1.5, 3.0, 0.0, -0.0, 42.0;
    const Eigen::MatrixXd heads = project(bank, z);
    REQUIRE(heads.cols() == 3);
    for (int c = 0; c < 3; ++c) {
        CHECK(heads.col(c) == z);
    }
    Eigen::MatrixXd Z(6, 2);
    Z << z, 2.0 * z;
    CHECK(project_head(bank, 1, Z) == Z);
}

TEST_CASE("dimension and input contract violations are rejected") {
    const ProjectionBank bank = build_projection_bank(2, 3, 8, 1);
    CHECK_THROWS_AS(project(bank, Eigen::VectorXd::Zero(7)), ShapeError);
    Eigen::VectorXd bad = Eigen::VectorXd::Zero(8);
    bad[3] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(project(bank, bad), DataError);
    bad[3] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(project(bank, bad), DataError);
    CHECK_THROWS_AS(project_head(bank, 2, Eigen::MatrixXd::Zero(8, 1)),
                    ShapeError);
    CHECK_THROWS_AS(project_head(bank, -1, Eigen::MatrixXd::Zero(8, 1)),
                    ShapeError);
    CHECK_THROWS_AS(build_projection_bank(0, 3, 8, 1), ConfigError);
    CHECK_THROWS_AS(identity_projection_bank(2, 0), ConfigError);
}

TEST_CASE("projected output stays finite for finite input") {
    const ProjectionBank bank = build_projection_bank(4, 6, 32, 17);
    Rng rng(23);
    for (int trial = 0; trial < 100; ++trial) {
        Eigen::VectorXd z(32);
        for (int i = 0; i < 32; ++i) z[i] = rng.gaussian() * 1e3;
        CHECK(project(bank, z).allFinite());
    }
}
