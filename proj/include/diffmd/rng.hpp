#pragma once

#include "diffmd/types.hpp"

#include <cstdint>
#include <random>

namespace diffmd {

// Source of standard-normal draws. Samplers and the training loop consume
// noise only through this interface so tests can capture or replay draws.
class RandomSource {
  public:
    virtual ~RandomSource() = default;
    virtual double normal() = 0;

    Mat normal_matrix(Eigen::Index rows, Eigen::Index cols) {
        Mat m(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j)
                m(i, j) = normal();
        return m;
    }
};

class Mt19937Source final : public RandomSource {
  public:
    explicit Mt19937Source(std::uint64_t seed) : engine_(seed) {}

    double normal() override { return dist_(engine_); }
    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }
    std::mt19937_64& engine() { return engine_; }

  private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> dist_;
};

} // namespace diffmd
