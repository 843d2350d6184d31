#include "trajlens/data.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "trajlens/errors.hpp"
#include "trajlens/rng.hpp"

namespace trajlens {

std::vector<std::size_t> Dataset::sample_shape() const {
    return {inputs.shape().begin() + 1, inputs.shape().end()};
}

const char* to_string(SyntheticKind kind) {
    switch (kind) {
        case SyntheticKind::gaussian_blobs: return "gaussian_blobs";
        case SyntheticKind::two_spirals: return "two_spirals";
        case SyntheticKind::random_regression: return "random_regression";
    }
    return "?";
}

SyntheticKind synthetic_from_string(const std::string& name) {
    if (name == "gaussian_blobs") return SyntheticKind::gaussian_blobs;
    if (name == "two_spirals") return SyntheticKind::two_spirals;
    if (name == "random_regression") return SyntheticKind::random_regression;
    throw ConfigError("unknown synthetic dataset: " + name);
}

namespace {

Dataset make_blobs(std::size_t n, std::size_t dims, std::uint64_t seed,
                   const SyntheticOptions& opt) {
    const std::size_t classes = opt.classes >= 2 ? opt.classes : 2;
    Rng center_rng(mix_seed(seed, 0x626c6f62ULL /*'blob'*/, 1));
    std::vector<double> centers(classes * dims);
    for (std::size_t c = 0; c < classes; ++c) {
        double norm_sq = 0.0;
        for (std::size_t d = 0; d < dims; ++d) {
            centers[c * dims + d] = center_rng.normal();
            norm_sq += centers[c * dims + d] * centers[c * dims + d];
        }
        const double inv = norm_sq > 0.0 ? opt.separation / std::sqrt(norm_sq) : 0.0;
        for (std::size_t d = 0; d < dims; ++d) centers[c * dims + d] *= inv;
    }
    Rng rng(mix_seed(seed, 0x626c6f62ULL, 2));
    Tensor inputs({n, dims});
    Tensor targets({n});
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % classes;  // balanced
        targets[i] = static_cast<double>(c);
        for (std::size_t d = 0; d < dims; ++d) {
            inputs[i * dims + d] = centers[c * dims + d] + rng.normal();
        }
    }
    Dataset ds;
    ds.inputs = std::move(inputs);
    ds.targets = std::move(targets);
    ds.task = TaskKind::classification;
    ds.classes = classes;
    return ds;
}

Dataset make_spirals(std::size_t n, std::size_t dims, std::uint64_t seed,
                     const SyntheticOptions& opt) {
    if (dims < 2) throw ConfigError("two_spirals needs dims >= 2");
    Rng rng(mix_seed(seed, 0x73706972ULL /*'spir'*/, 0));
    Tensor inputs({n, dims});
    Tensor targets({n});
    constexpr double pi = 3.14159265358979323846;
    const std::size_t half = n / 2;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i < half ? 0 : 1;
        const std::size_t j = c == 0 ? i : i - half;
        const std::size_t m = c == 0 ? half : n - half;
        const double t = m > 1 ? static_cast<double>(j) / static_cast<double>(m - 1) : 0.0;
        const double radius = 0.2 + 0.8 * t;
        const double angle = 3.5 * pi * t + (c == 1 ? pi : 0.0);
        inputs[i * dims + 0] = radius * std::cos(angle) + opt.noise * rng.normal();
        inputs[i * dims + 1] = radius * std::sin(angle) + opt.noise * rng.normal();
        for (std::size_t d = 2; d < dims; ++d) inputs[i * dims + d] = 0.0;
        targets[i] = static_cast<double>(c);
    }
    Dataset ds;
    ds.inputs = std::move(inputs);
    ds.targets = std::move(targets);
    ds.task = TaskKind::classification;
    ds.classes = 2;
    return ds;
}

// Fixed random tanh MLP dims -> width -> 1 with weights drawn from the seed.
struct Teacher {
    std::size_t dims, width;
    std::vector<double> w1, b1, w2;
    double b2;

    Teacher(std::size_t dims, std::size_t width, std::uint64_t seed)
        : dims(dims), width(width), w1(width * dims), b1(width), w2(width) {
        Rng rng(mix_seed(seed, 0x74656163ULL /*'teac'*/, 0));
        const double a1 = std::sqrt(1.0 / static_cast<double>(dims));
        for (double& v : w1) v = rng.uniform(-a1, a1) * 3.0;
        for (double& v : b1) v = rng.uniform(-1.0, 1.0);
        const double a2 = std::sqrt(1.0 / static_cast<double>(width));
        for (double& v : w2) v = rng.uniform(-a2, a2) * 3.0;
        b2 = rng.uniform(-0.5, 0.5);
    }

    double predict(const double* x) const {
        double out = b2;
        for (std::size_t h = 0; h < width; ++h) {
            double pre = b1[h];
            for (std::size_t d = 0; d < dims; ++d) pre += w1[h * dims + d] * x[d];
            out += w2[h] * std::tanh(pre);
        }
        return out;
    }
};

Dataset make_regression(std::size_t n, std::size_t dims, std::uint64_t seed,
                        const SyntheticOptions& opt) {
    Rng rng(mix_seed(seed, 0x72656772ULL /*'regr'*/, 0));
    Tensor inputs({n, dims});
    for (std::size_t i = 0; i < n * dims; ++i) inputs[i] = rng.normal();
    const Teacher teacher(dims, opt.teacher_width, seed);
    Tensor targets({n, 1});
    Rng noise_rng(mix_seed(seed, 0x72656772ULL, 1));
    for (std::size_t i = 0; i < n; ++i) {
        targets[i] = teacher.predict(inputs.data() + i * dims) + opt.noise * noise_rng.normal();
    }
    Dataset ds;
    ds.inputs = std::move(inputs);
    ds.targets = std::move(targets);
    ds.task = TaskKind::regression;
    return ds;
}

}  // namespace

Dataset make_synthetic(SyntheticKind kind, std::size_t n, std::size_t dims,
                       std::uint64_t seed, const SyntheticOptions& options) {
    if (n == 0 || dims == 0) throw ConfigError("synthetic dataset needs n > 0 and dims > 0");
    switch (kind) {
        case SyntheticKind::gaussian_blobs: return make_blobs(n, dims, seed, options);
        case SyntheticKind::two_spirals: return make_spirals(n, dims, seed, options);
        case SyntheticKind::random_regression: return make_regression(n, dims, seed, options);
    }
    throw ConfigError("unknown synthetic kind");
}

Tensor regression_teacher_predict(const Tensor& inputs, std::size_t dims, std::uint64_t seed,
                                  const SyntheticOptions& options) {
    const Teacher teacher(dims, options.teacher_width, seed);
    const std::size_t n = inputs.extent(0);
    Tensor out({n, 1});
    for (std::size_t i = 0; i < n; ++i) out[i] = teacher.predict(inputs.data() + i * dims);
    return out;
}

namespace {

std::uint32_t read_be_u32(std::istream& in, std::int64_t& offset) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (in.gcount() != 4) {
        throw ParseError("unexpected end of IDX file at byte " + std::to_string(offset),
                         offset);
    }
    offset += 4;
    return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
           (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

}  // namespace

Tensor load_idx_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open IDX file: " + path, 0);
    std::int64_t offset = 0;
    const std::uint32_t magic = read_be_u32(in, offset);
    if ((magic & 0xffffff00u) != 0x00000800u) {
        throw ParseError("bad IDX magic in " + path, 0);
    }
    const std::size_t ndims = magic & 0xffu;
    if (ndims == 0 || ndims > 4) {
        throw ParseError("unsupported IDX rank " + std::to_string(ndims) + " in " + path, 3);
    }
    std::vector<std::size_t> shape(ndims);
    std::size_t total = 1;
    for (std::size_t d = 0; d < ndims; ++d) {
        shape[d] = read_be_u32(in, offset);
        if (shape[d] == 0) throw ParseError("zero extent in IDX header of " + path, offset - 4);
        total *= shape[d];
    }
    std::vector<unsigned char> raw(total);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(total));
    if (static_cast<std::size_t>(in.gcount()) != total) {
        throw ParseError("IDX file " + path + " truncated at byte " +
                         std::to_string(offset + in.gcount()), offset + in.gcount());
    }
    Tensor out(shape);
    for (std::size_t i = 0; i < total; ++i) out[i] = static_cast<double>(raw[i]);
    return out;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    Tensor images = load_idx_tensor(images_path);
    Tensor labels = load_idx_tensor(labels_path);
    if (images.rank() < 2) throw ParseError("IDX image file must have rank >= 2", 3);
    if (labels.rank() != 1) throw ParseError("IDX label file must have rank 1", 3);
    const std::size_t n = images.extent(0);
    if (labels.extent(0) != n) {
        throw ParseError("IDX image/label counts disagree: " + std::to_string(n) + " vs " +
                         std::to_string(labels.extent(0)));
    }
    const std::size_t per_sample = images.size() / n;
    std::vector<double> flat = images.values();
    for (double& v : flat) v /= 255.0;
    std::size_t classes = 0;
    for (std::size_t i = 0; i < n; ++i) {
        classes = std::max(classes, static_cast<std::size_t>(labels[i]) + 1);
    }
    Dataset ds;
    ds.inputs = Tensor({n, per_sample}, std::move(flat));
    ds.targets = std::move(labels);
    ds.task = TaskKind::classification;
    ds.classes = classes;
    return ds;
}

Dataset load_csv(const std::string& path, bool classification) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open CSV file: " + path, 0);
    std::vector<std::vector<double>> rows;
    std::string line;
    std::int64_t row_index = 0;
    std::size_t width = 0;
    while (std::getline(in, line)) {
        ++row_index;
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                const double v = std::stod(cell, &used);
                while (used < cell.size() &&
                       (cell[used] == ' ' || cell[used] == '\r' || cell[used] == '\t')) {
                    ++used;
                }
                if (used != cell.size()) throw std::invalid_argument(cell);
                row.push_back(v);
            } catch (const std::exception&) {
                throw ParseError("CSV " + path + ": row " + std::to_string(row_index) +
                                 " has non-numeric cell '" + cell + "'", row_index);
            }
        }
        if (row.size() < 2) {
            throw ParseError("CSV " + path + ": row " + std::to_string(row_index) +
                             " needs at least one feature and a target", row_index);
        }
        if (width == 0) {
            width = row.size();
        } else if (row.size() != width) {
            throw ParseError("CSV " + path + ": row " + std::to_string(row_index) + " has " +
                             std::to_string(row.size()) + " columns, expected " +
                             std::to_string(width), row_index);
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ParseError("CSV file " + path + " holds no samples", 0);
    const std::size_t n = rows.size();
    const std::size_t dims = width - 1;
    Tensor inputs({n, dims});
    Dataset ds;
    if (classification) {
        Tensor targets({n});
        std::size_t classes = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double t = rows[i][dims];
            if (t < 0.0 || t != std::floor(t)) {
                throw ParseError("CSV " + path + ": row " + std::to_string(i + 1) +
                                 " target is not a class id", static_cast<std::int64_t>(i + 1));
            }
            targets[i] = t;
            classes = std::max(classes, static_cast<std::size_t>(t) + 1);
            for (std::size_t d = 0; d < dims; ++d) inputs[i * dims + d] = rows[i][d];
        }
        ds.targets = std::move(targets);
        ds.task = TaskKind::classification;
        ds.classes = classes;
    } else {
        Tensor targets({n, 1});
        for (std::size_t i = 0; i < n; ++i) {
            targets[i] = rows[i][dims];
            for (std::size_t d = 0; d < dims; ++d) inputs[i * dims + d] = rows[i][d];
        }
        ds.targets = std::move(targets);
        ds.task = TaskKind::regression;
    }
    ds.inputs = std::move(inputs);
    return ds;
}

ReshuffleSampler::ReshuffleSampler(std::size_t n_batches, std::size_t batch_size,
                                   std::uint64_t seed)
    : n_batches_(n_batches), batch_size_(batch_size), seed_(seed) {
    if (n_batches == 0) throw ConfigError("sampler needs at least one batch");
    perm_ = keyed_permutation(seed_, 0, static_cast<std::uint32_t>(n_batches_));
}

std::size_t ReshuffleSampler::next_index() {
    if (cursor_ == n_batches_) {
        ++epoch_;
        cursor_ = 0;
        perm_ = keyed_permutation(seed_, epoch_, static_cast<std::uint32_t>(n_batches_));
    }
    return perm_[cursor_++];
}

std::size_t batch_count(const Dataset& dataset, std::size_t batch_size) {
    if (batch_size == 0) throw ConfigError("batch_size must be > 0");
    const std::size_t n = dataset.size() / batch_size;  // partial tail dropped
    if (n == 0) {
        throw ConfigError("dataset of " + std::to_string(dataset.size()) +
                          " samples cannot fill a batch of " + std::to_string(batch_size));
    }
    return n;
}

Batch make_batch(const Dataset& dataset, std::size_t xi, std::size_t batch_size) {
    const std::size_t n = batch_count(dataset, batch_size);
    if (xi >= n) throw DimensionError("batch index out of range");
    const std::size_t per_sample = dataset.inputs.size() / dataset.size();
    const std::size_t tgt_per_sample = dataset.targets.size() / dataset.size();
    const std::size_t first = xi * batch_size;

    std::vector<std::size_t> in_shape = dataset.inputs.shape();
    in_shape[0] = batch_size;
    std::vector<double> in_vals(dataset.inputs.values().begin() + first * per_sample,
                                dataset.inputs.values().begin() +
                                    (first + batch_size) * per_sample);

    std::vector<std::size_t> tgt_shape = dataset.targets.shape();
    tgt_shape[0] = batch_size;
    std::vector<double> tgt_vals(dataset.targets.values().begin() + first * tgt_per_sample,
                                 dataset.targets.values().begin() +
                                     (first + batch_size) * tgt_per_sample);

    Batch batch;
    batch.inputs = Tensor(std::move(in_shape), std::move(in_vals));
    batch.targets = Tensor(std::move(tgt_shape), std::move(tgt_vals));
    batch.index = xi;
    return batch;
}

Batch next_batch(ReshuffleSampler& sampler, const Dataset& dataset) {
    return make_batch(dataset, sampler.next_index(), sampler.batch_size());
}

}  // namespace trajlens
