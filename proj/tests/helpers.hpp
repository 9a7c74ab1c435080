#ifndef DKVB_TESTS_HELPERS_HPP
#define DKVB_TESTS_HELPERS_HPP

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace testutil {

/// Self-deleting scratch directory for file round-trip tests.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::mt19937_64 gen{std::random_device{}()};
        path_ = std::filesystem::temp_directory_path() /
                ("dkvb-test-" + tag + "-" + std::to_string(gen()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const {
        return (path_ / name).string();
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline std::vector<char> read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in),
            std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::string& path, const std::vector<char>& b) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

/// Bit-level equality (distinguishes -0.0f from 0.0f, compares NaNs by
/// pattern); the float == operator would not.
inline bool same_bits(const Eigen::MatrixXf& a, const Eigen::MatrixXf& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    return std::memcmp(a.data(), b.data(),
                       sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

inline bool same_bits(const Eigen::VectorXf& a, const Eigen::VectorXf& b) {
    if (a.size() != b.size()) return false;
    return std::memcmp(a.data(), b.data(),
                       sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

/// |a - b| relative to the larger magnitude, floored to dodge 0/0.
inline double rel_err(double a, double b) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-10});
    return std::abs(a - b) / scale;
}

}  // namespace testutil

#endif  // DKVB_TESTS_HELPERS_HPP
