#pragma once

#include "kcnet/kcnet.hpp"

#include <filesystem>
#include <string>
#include <unistd.h>

namespace kcnet::test {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(lo, hi);
    return m;
}

/// Gaussian-ish blobs: class k is centred on a random point, so a linear
/// readout of random features separates them well.
inline Dataset blobs(std::size_t n, std::size_t d, std::size_t c, std::uint64_t seed, double spread = 0.6) {
    Rng rng(seed);
    Matrix centres = random_matrix(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(d), rng, -2.0, 2.0);
    Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    std::vector<int> y(n);
    std::vector<std::string> names;
    for (std::size_t k = 0; k < c; ++k) names.push_back("c" + std::to_string(k));
    for (std::size_t s = 0; s < n; ++s) {
        const auto k = s % c;
        y[s] = static_cast<int>(k);
        for (std::size_t i = 0; i < d; ++i)
            x(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(i)) =
                centres(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) +
                spread * (rng.uniform01() + rng.uniform01() + rng.uniform01() - 1.5);
    }
    return Dataset(std::move(x), std::move(y), std::move(names));
}

/// Fresh scratch directory, removed on destruction.
class TempDir {
public:
    TempDir() {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("kcnet-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

}  // namespace kcnet::test
