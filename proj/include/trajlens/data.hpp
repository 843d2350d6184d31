#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trajlens/network.hpp"
#include "trajlens/tensor.hpp"

namespace trajlens {

enum class TaskKind { classification, regression };

/// Immutable training set. Classification targets are class ids in [0, C).
struct Dataset {
    Tensor inputs;   // [N x ...]
    Tensor targets;  // [N] class ids or [N x K] regression targets
    TaskKind task = TaskKind::classification;
    std::size_t classes = 0;  // classification only

    std::size_t size() const { return inputs.extent(0); }
    std::vector<std::size_t> sample_shape() const;
};

enum class SyntheticKind { gaussian_blobs, two_spirals, random_regression };

const char* to_string(SyntheticKind kind);
SyntheticKind synthetic_from_string(const std::string& name);

struct SyntheticOptions {
    std::size_t classes = 2;    // gaussian_blobs
    double separation = 3.0;    // gaussian_blobs: distance of class centers from origin
    double noise = 0.0;         // label-preserving jitter / regression noise std
    std::size_t teacher_width = 16;  // random_regression hidden width
};

/// Deterministic synthetic datasets, desk-scale stand-ins for image corpora.
Dataset make_synthetic(SyntheticKind kind, std::size_t n, std::size_t dims,
                       std::uint64_t seed, const SyntheticOptions& options = {});

/// The teacher used by random_regression with the same (dims, seed, options):
/// with zero noise it reproduces the targets exactly.
Tensor regression_teacher_predict(const Tensor& inputs, std::size_t dims, std::uint64_t seed,
                                  const SyntheticOptions& options = {});

/// IDX (big-endian, standard magic bytes). The images file gives inputs
/// scaled to [0,1] and flattened per sample; the labels file gives class ids.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Single IDX file as a tensor, dims straight from the header.
Tensor load_idx_tensor(const std::string& path);

/// CSV: one row per sample, last column the target. `classification` decides
/// whether the target column is a class id or a regression value.
Dataset load_csv(const std::string& path, bool classification);

/// Random sampling with reshuffle over fixed mini-batches: each epoch emits
/// a seeded permutation of [0, n_batches), so across B epochs every batch is
/// visited exactly B times. The sequence is a pure function of
/// (seed, n_batches, epoch); replay regenerates it without stored state.
class ReshuffleSampler {
public:
    ReshuffleSampler(std::size_t n_batches, std::size_t batch_size, std::uint64_t seed);

    /// Batch index xi_k for the next iteration, advancing the cursor.
    std::size_t next_index();

    std::size_t n_batches() const { return n_batches_; }
    std::size_t batch_size() const { return batch_size_; }
    std::size_t epoch() const { return epoch_; }
    std::size_t cursor() const { return cursor_; }

private:
    std::size_t n_batches_;
    std::size_t batch_size_;
    std::uint64_t seed_;
    std::size_t epoch_ = 0;
    std::size_t cursor_ = 0;
    std::vector<std::uint32_t> perm_;
};

/// Number of equal-size batches; a trailing partial batch is dropped.
std::size_t batch_count(const Dataset& dataset, std::size_t batch_size);

/// The xi-th fixed mini-batch. Batch membership never changes: batch xi is
/// rows [xi*batch_size, (xi+1)*batch_size).
Batch make_batch(const Dataset& dataset, std::size_t xi, std::size_t batch_size);

/// Draw the next batch via the sampler's reshuffled order.
Batch next_batch(ReshuffleSampler& sampler, const Dataset& dataset);

}  // namespace trajlens
