#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace sirsa {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Rng = std::mt19937_64;

/// Contexts are plain real vectors; the dimension is fixed per environment.
using ContextVector = Vec;

/// Derive an independent stream from a parent seed and a stream id (splitmix64).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Keeps large temporaries on the heap instead of mmap/munmap per call (glibc only).
void tune_allocator();

}  // namespace sirsa
