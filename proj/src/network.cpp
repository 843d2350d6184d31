#include "trajlens/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "trajlens/errors.hpp"
#include "trajlens/rng.hpp"

namespace trajlens {

const char* to_string(ActivationKind kind) {
    switch (kind) {
        case ActivationKind::sigmoid: return "sigmoid";
        case ActivationKind::tanh_act: return "tanh";
        case ActivationKind::relu: return "relu";
        case ActivationKind::leaky_relu: return "leaky_relu";
    }
    return "?";
}

const char* to_string(LossKind kind) {
    return kind == LossKind::cross_entropy_softmax ? "cross_entropy_softmax" : "mse";
}

ActivationKind activation_from_string(const std::string& name) {
    if (name == "sigmoid") return ActivationKind::sigmoid;
    if (name == "tanh") return ActivationKind::tanh_act;
    if (name == "relu") return ActivationKind::relu;
    if (name == "leaky_relu") return ActivationKind::leaky_relu;
    throw ConfigError("unknown activation: " + name);
}

LossKind loss_from_string(const std::string& name) {
    if (name == "cross_entropy_softmax") return LossKind::cross_entropy_softmax;
    if (name == "mse") return LossKind::mse;
    throw ConfigError("unknown loss: " + name);
}

LayerSpec LayerSpec::dense_layer(std::size_t in, std::size_t out) {
    LayerSpec s;
    s.kind = Kind::dense;
    s.in = in;
    s.out = out;
    return s;
}

LayerSpec LayerSpec::conv_layer(std::size_t cin, std::size_t cout, std::size_t ksize,
                                std::size_t stride, std::size_t pad) {
    LayerSpec s;
    s.kind = Kind::conv2d;
    s.cin = cin;
    s.cout = cout;
    s.ksize = ksize;
    s.stride = stride;
    s.pad = pad;
    return s;
}

LayerSpec LayerSpec::batch_norm_layer(std::size_t features, double eps, double momentum) {
    LayerSpec s;
    s.kind = Kind::batch_norm;
    s.features = features;
    s.eps = eps;
    s.momentum = momentum;
    return s;
}

LayerSpec LayerSpec::activation_layer(ActivationKind kind, double slope) {
    LayerSpec s;
    s.kind = Kind::activation;
    s.act = kind;
    s.slope = slope;
    return s;
}

LayerSpec LayerSpec::flatten_layer() {
    LayerSpec s;
    s.kind = Kind::flatten;
    return s;
}

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += 'x';
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

}  // namespace

std::vector<std::vector<std::size_t>> NetworkSpec::infer_shapes() const {
    if (input_shape.empty()) throw DimensionError("network input_shape is empty");
    std::vector<std::vector<std::size_t>> shapes;
    shapes.reserve(layers.size() + 1);
    shapes.push_back(input_shape);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& l = layers[i];
        const std::vector<std::size_t>& x = shapes.back();
        switch (l.kind) {
            case LayerSpec::Kind::dense: {
                if (x.size() != 1 || x[0] != l.in) {
                    throw DimensionError("layer " + std::to_string(i) + ": dense(" +
                                         std::to_string(l.in) + "," + std::to_string(l.out) +
                                         ") cannot take input " + shape_str(x));
                }
                shapes.push_back({l.out});
                break;
            }
            case LayerSpec::Kind::conv2d: {
                if (x.size() != 3 || x[0] != l.cin) {
                    throw DimensionError("layer " + std::to_string(i) +
                                         ": conv2d expects [" + std::to_string(l.cin) +
                                         " x H x W], got " + shape_str(x));
                }
                const std::size_t ph = x[1] + 2 * l.pad, pw = x[2] + 2 * l.pad;
                if (l.ksize > ph || l.ksize > pw || (ph - l.ksize) % l.stride != 0 ||
                    (pw - l.ksize) % l.stride != 0) {
                    throw DimensionError("layer " + std::to_string(i) +
                                         ": conv2d output extent not integral");
                }
                shapes.push_back({l.cout, (ph - l.ksize) / l.stride + 1,
                                  (pw - l.ksize) / l.stride + 1});
                break;
            }
            case LayerSpec::Kind::batch_norm: {
                if (l.eps <= 0.0) throw DimensionError("batch_norm eps must be > 0");
                const std::size_t f = x.size() == 1 ? x[0] : x.size() == 3 ? x[0] : 0;
                if (f == 0 || f != l.features) {
                    throw DimensionError("layer " + std::to_string(i) + ": batch_norm(" +
                                         std::to_string(l.features) + ") cannot take input " +
                                         shape_str(x));
                }
                shapes.push_back(x);
                break;
            }
            case LayerSpec::Kind::activation: {
                if (l.act == ActivationKind::leaky_relu && (l.slope <= 0.0 || l.slope >= 1.0)) {
                    throw DimensionError("leaky_relu slope must lie in (0,1)");
                }
                shapes.push_back(x);
                break;
            }
            case LayerSpec::Kind::flatten: {
                shapes.push_back({shape_product(x)});
                break;
            }
        }
    }
    for (const SkipEdge& e : skip_edges) {
        if (e.from > e.to || e.to >= layers.size()) {
            throw DimensionError("skip edge (" + std::to_string(e.from) + " -> " +
                                 std::to_string(e.to) + ") out of order or out of range");
        }
        const auto& src = shapes[e.from];
        const auto& dst = shapes[e.to + 1];
        if (!e.projected && src != dst) {
            throw DimensionError("skip edge joins " + shape_str(src) + " to " +
                                 shape_str(dst) + " without a projection");
        }
        if (e.projected && (src.size() != dst.size() || (src.size() == 3 &&
                            (src[1] != dst[1] || src[2] != dst[2])))) {
            throw DimensionError("projected skip edge cannot map " + shape_str(src) +
                                 " to " + shape_str(dst));
        }
    }
    return shapes;
}

void NetworkSpec::validate() const { (void)infer_shapes(); }

const ParamSegment& ParamLayout::find(const std::string& name) const {
    for (const ParamSegment& s : segments) {
        if (s.name == name) return s;
    }
    throw DimensionError("no parameter segment named " + name);
}

ParamLayout build_layout(const NetworkSpec& spec) {
    const auto shapes = spec.infer_shapes();
    ParamLayout layout;
    auto push = [&layout](std::string name, std::vector<std::size_t> shape) {
        ParamSegment seg;
        seg.name = std::move(name);
        seg.shape = std::move(shape);
        seg.offset = layout.dim;
        seg.length = shape_product(seg.shape);
        layout.dim += seg.length;
        layout.segments.push_back(std::move(seg));
    };
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        const std::string prefix = "layer" + std::to_string(i);
        switch (l.kind) {
            case LayerSpec::Kind::dense:
                push(prefix + ".weight", {l.out, l.in});
                push(prefix + ".bias", {l.out});
                break;
            case LayerSpec::Kind::conv2d:
                push(prefix + ".weight", {l.cout, l.cin, l.ksize, l.ksize});
                push(prefix + ".bias", {l.cout});
                break;
            case LayerSpec::Kind::batch_norm:
                push(prefix + ".scale", {l.features});
                push(prefix + ".shift", {l.features});
                break;
            default:
                break;
        }
    }
    for (std::size_t j = 0; j < spec.skip_edges.size(); ++j) {
        const SkipEdge& e = spec.skip_edges[j];
        if (!e.projected) continue;
        const auto& src = shapes[e.from];
        const auto& dst = shapes[e.to + 1];
        push("skip" + std::to_string(j) + ".weight", {dst[0], src[0]});
    }
    return layout;
}

std::span<double> ParamVector::segment(const std::string& name) {
    const ParamSegment& s = layout->find(name);
    return {values.data() + s.offset, s.length};
}

std::span<const double> ParamVector::segment(const std::string& name) const {
    const ParamSegment& s = layout->find(name);
    return {values.data() + s.offset, s.length};
}

ParamVector zeros_like(const ParamVector& other) {
    ParamVector p;
    p.values.assign(other.values.size(), 0.0);
    p.layout = other.layout;
    return p;
}

ParamVector init_params(const NetworkSpec& spec, std::uint64_t seed) {
    auto layout = std::make_shared<ParamLayout>(build_layout(spec));
    ParamVector params;
    params.layout = layout;
    params.values.assign(layout->dim, 0.0);
    Rng rng(mix_seed(seed, 0x696e6974ULL /*'init'*/));
    for (const ParamSegment& seg : layout->segments) {
        double* p = params.values.data() + seg.offset;
        const bool is_weight = seg.name.size() > 7 &&
                               seg.name.compare(seg.name.size() - 7, 7, ".weight") == 0;
        if (is_weight) {
            // fan_in: dense [out,in] -> in; conv [o,c,k,k] -> c*k*k; skip [to,from] -> from
            std::size_t fan_in = 1;
            for (std::size_t a = 1; a < seg.shape.size(); ++a) fan_in *= seg.shape[a];
            const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
            for (std::size_t i = 0; i < seg.length; ++i) p[i] = rng.uniform(-bound, bound);
        } else if (seg.name.size() > 6 &&
                   seg.name.compare(seg.name.size() - 6, 6, ".scale") == 0) {
            std::fill(p, p + seg.length, 1.0);
        }
        // biases and shifts stay 0
    }
    return params;
}

std::vector<Tensor> unflatten(const ParamVector& params) {
    std::vector<Tensor> out;
    out.reserve(params.layout->segments.size());
    for (const ParamSegment& seg : params.layout->segments) {
        std::vector<double> vals(params.values.begin() + seg.offset,
                                 params.values.begin() + seg.offset + seg.length);
        out.emplace_back(seg.shape, std::move(vals));
    }
    return out;
}

ParamVector flatten(const NetworkSpec& spec, const std::vector<Tensor>& tensors) {
    auto layout = std::make_shared<ParamLayout>(build_layout(spec));
    if (tensors.size() != layout->segments.size()) {
        throw DimensionError("flatten: expected " + std::to_string(layout->segments.size()) +
                             " tensors, got " + std::to_string(tensors.size()));
    }
    ParamVector params;
    params.layout = layout;
    params.values.reserve(layout->dim);
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const ParamSegment& seg = layout->segments[i];
        if (tensors[i].shape() != seg.shape) {
            throw DimensionError("flatten: segment " + seg.name + " expects shape " +
                                 shape_str(seg.shape) + ", got " + tensors[i].shape_string());
        }
        params.values.insert(params.values.end(), tensors[i].values().begin(),
                             tensors[i].values().end());
    }
    return params;
}

RunningStats RunningStats::for_spec(const NetworkSpec& spec) {
    RunningStats rs;
    rs.mean.resize(spec.layers.size());
    rs.var.resize(spec.layers.size());
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        if (spec.layers[i].kind != LayerSpec::Kind::batch_norm) continue;
        const std::size_t f = spec.layers[i].features;
        rs.mean[i] = Tensor({f});
        rs.var[i] = Tensor({f}, std::vector<double>(f, 1.0));
    }
    return rs;
}

namespace {

double apply_activation(ActivationKind kind, double slope, double x) {
    switch (kind) {
        case ActivationKind::sigmoid: return 1.0 / (1.0 + std::exp(-x));
        case ActivationKind::tanh_act: return std::tanh(x);
        case ActivationKind::relu: return x > 0.0 ? x : 0.0;
        case ActivationKind::leaky_relu: return x > 0.0 ? x : slope * x;
    }
    return x;
}

double activation_grad(ActivationKind kind, double slope, double x) {
    switch (kind) {
        case ActivationKind::sigmoid: {
            const double s = 1.0 / (1.0 + std::exp(-x));
            return s * (1.0 - s);
        }
        case ActivationKind::tanh_act: {
            const double t = std::tanh(x);
            return 1.0 - t * t;
        }
        case ActivationKind::relu: return x > 0.0 ? 1.0 : 0.0;
        case ActivationKind::leaky_relu: return x > 0.0 ? 1.0 : slope;
    }
    return 1.0;
}

Tensor dense_forward(const Tensor& x, std::span<const double> w, std::span<const double> b,
                     std::size_t in, std::size_t out) {
    const std::size_t batch = x.extent(0);
    Tensor y({batch, out});
    for (std::size_t i = 0; i < batch; ++i) {
        const double* xi = x.data() + i * in;
        double* yi = y.data() + i * out;
        for (std::size_t o = 0; o < out; ++o) {
            double acc = b[o];
            const double* wo = w.data() + o * in;
            for (std::size_t j = 0; j < in; ++j) acc += xi[j] * wo[j];
            yi[o] = acc;
        }
    }
    return y;
}

Tensor conv_forward(const Tensor& x, std::span<const double> w, std::span<const double> b,
                    const LayerSpec& l, const std::vector<std::size_t>& out_shape) {
    const std::size_t batch = x.extent(0);
    const std::size_t h = x.extent(2), wid = x.extent(3);
    const std::size_t oh = out_shape[1], ow = out_shape[2];
    const std::size_t k = l.ksize;
    Tensor y({batch, l.cout, oh, ow});
    for (std::size_t bi = 0; bi < batch; ++bi) {
        const double* xb = x.data() + bi * l.cin * h * wid;
        double* yb = y.data() + bi * l.cout * oh * ow;
        for (std::size_t o = 0; o < l.cout; ++o) {
            for (std::size_t oy = 0; oy < oh; ++oy) {
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    double acc = b[o];
                    for (std::size_t c = 0; c < l.cin; ++c) {
                        for (std::size_t u = 0; u < k; ++u) {
                            const std::ptrdiff_t iy =
                                static_cast<std::ptrdiff_t>(oy * l.stride + u) -
                                static_cast<std::ptrdiff_t>(l.pad);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                            for (std::size_t v = 0; v < k; ++v) {
                                const std::ptrdiff_t ix =
                                    static_cast<std::ptrdiff_t>(ox * l.stride + v) -
                                    static_cast<std::ptrdiff_t>(l.pad);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wid)) continue;
                                acc += xb[(c * h + iy) * wid + ix] *
                                       w[((o * l.cin + c) * k + u) * k + v];
                            }
                        }
                    }
                    yb[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    return y;
}

// Per-feature (rank 2) or per-channel (rank 4) index helpers for batch norm.
struct BnGeometry {
    std::size_t features;
    std::size_t group_size;  // elements normalized together per feature
    std::size_t batch;
    std::size_t spatial;  // 1 for rank-2 input

    static BnGeometry of(const Tensor& x) {
        BnGeometry g{};
        g.batch = x.extent(0);
        if (x.rank() == 2) {
            g.features = x.extent(1);
            g.spatial = 1;
        } else if (x.rank() == 4) {
            g.features = x.extent(1);
            g.spatial = x.extent(2) * x.extent(3);
        } else {
            throw DimensionError("batch_norm expects [B x F] or [B x C x H x W], got " +
                                 x.shape_string());
        }
        g.group_size = g.batch * g.spatial;
        return g;
    }

    std::size_t index(std::size_t b, std::size_t f, std::size_t s) const {
        return (b * features + f) * spatial + s;
    }
};

}  // namespace

Tensor batch_norm_forward(const Tensor& x, std::span<const double> scale_param,
                          std::span<const double> shift, double eps, Mode mode,
                          Tensor* running_mean, Tensor* running_var, double momentum,
                          ForwardCache::BnAux* aux) {
    const BnGeometry g = BnGeometry::of(x);
    if (scale_param.size() != g.features || shift.size() != g.features) {
        throw DimensionError("batch_norm parameter length does not match feature count");
    }
    Tensor y(x.shape());
    if (mode == Mode::eval) {
        if (running_mean == nullptr || running_var == nullptr ||
            running_mean->size() != g.features) {
            throw ConfigError("batch_norm eval mode requires running statistics");
        }
        for (std::size_t f = 0; f < g.features; ++f) {
            const double inv = 1.0 / std::sqrt((*running_var)[f] + eps);
            for (std::size_t b = 0; b < g.batch; ++b) {
                for (std::size_t s = 0; s < g.spatial; ++s) {
                    const std::size_t i = g.index(b, f, s);
                    y[i] = (x[i] - (*running_mean)[f]) * inv * scale_param[f] + shift[f];
                }
            }
        }
        return y;
    }
    if (g.batch < 2) {
        throw DimensionError("batch_norm train mode needs batch size >= 2, got " +
                             std::to_string(g.batch));
    }
    if (aux != nullptr) {
        aux->xhat = Tensor(x.shape());
        aux->inv_std.assign(g.features, 0.0);
    }
    const double m = static_cast<double>(g.group_size);
    for (std::size_t f = 0; f < g.features; ++f) {
        double mean = 0.0;
        for (std::size_t b = 0; b < g.batch; ++b) {
            for (std::size_t s = 0; s < g.spatial; ++s) mean += x[g.index(b, f, s)];
        }
        mean /= m;
        double var = 0.0;
        for (std::size_t b = 0; b < g.batch; ++b) {
            for (std::size_t s = 0; s < g.spatial; ++s) {
                const double d = x[g.index(b, f, s)] - mean;
                var += d * d;
            }
        }
        var /= m;  // biased
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t b = 0; b < g.batch; ++b) {
            for (std::size_t s = 0; s < g.spatial; ++s) {
                const std::size_t i = g.index(b, f, s);
                const double xh = (x[i] - mean) * inv;
                if (aux != nullptr) aux->xhat[i] = xh;
                y[i] = xh * scale_param[f] + shift[f];
            }
        }
        if (aux != nullptr) aux->inv_std[f] = inv;
        if (running_mean != nullptr && running_var != nullptr &&
            running_mean->size() == g.features) {
            (*running_mean)[f] = (1.0 - momentum) * (*running_mean)[f] + momentum * mean;
            (*running_var)[f] = (1.0 - momentum) * (*running_var)[f] + momentum * var;
        }
    }
    return y;
}

namespace {

void apply_projection(const Tensor& src, std::span<const double> proj, Tensor& dst) {
    // dst[b, f_to, ...] += sum_j proj[f_to, j] * src[b, j, ...]
    const std::size_t batch = src.extent(0);
    const std::size_t fin = src.extent(1);
    const std::size_t fout = dst.extent(1);
    const std::size_t spatial = src.size() / (batch * fin);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t o = 0; o < fout; ++o) {
            for (std::size_t s = 0; s < spatial; ++s) {
                double acc = 0.0;
                for (std::size_t j = 0; j < fin; ++j) {
                    acc += proj[o * fin + j] * src[(b * fin + j) * spatial + s];
                }
                dst[(b * fout + o) * spatial + s] += acc;
            }
        }
    }
}

double compute_loss(LossKind kind, const Tensor& output, const Tensor& targets) {
    const std::size_t batch = output.extent(0);
    if (kind == LossKind::cross_entropy_softmax) {
        if (output.rank() != 2) {
            throw DimensionError("cross entropy expects logits [B x C], got " +
                                 output.shape_string());
        }
        if (targets.size() != batch) {
            throw DimensionError("cross entropy expects one class id per sample");
        }
        const std::size_t classes = output.extent(1);
        double total = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
            const double t = targets[b];
            const auto cls = static_cast<std::size_t>(t);
            if (t < 0.0 || cls >= classes || static_cast<double>(cls) != t) {
                throw DimensionError("class target " + std::to_string(t) +
                                     " outside [0, " + std::to_string(classes) + ")");
            }
            const double* z = output.data() + b * classes;
            double zmax = z[0];
            for (std::size_t c = 1; c < classes; ++c) zmax = std::max(zmax, z[c]);
            double sum = 0.0;
            for (std::size_t c = 0; c < classes; ++c) sum += std::exp(z[c] - zmax);
            total += zmax + std::log(sum) - z[cls];
        }
        return total / static_cast<double>(batch);
    }
    if (!output.same_shape(targets)) {
        throw DimensionError("mse prediction shape " + output.shape_string() +
                             " does not match target shape");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < output.size(); ++i) {
        const double d = output[i] - targets[i];
        total += d * d;
    }
    return total / static_cast<double>(output.size());
}

Tensor loss_backward(LossKind kind, const Tensor& output, const Tensor& targets) {
    const std::size_t batch = output.extent(0);
    Tensor g(output.shape());
    if (kind == LossKind::cross_entropy_softmax) {
        const std::size_t classes = output.extent(1);
        const double inv_b = 1.0 / static_cast<double>(batch);
        for (std::size_t b = 0; b < batch; ++b) {
            const double* z = output.data() + b * classes;
            double* gb = g.data() + b * classes;
            double zmax = z[0];
            for (std::size_t c = 1; c < classes; ++c) zmax = std::max(zmax, z[c]);
            double sum = 0.0;
            for (std::size_t c = 0; c < classes; ++c) sum += std::exp(z[c] - zmax);
            const auto cls = static_cast<std::size_t>(targets[b]);
            for (std::size_t c = 0; c < classes; ++c) {
                gb[c] = (std::exp(z[c] - zmax) / sum - (c == cls ? 1.0 : 0.0)) * inv_b;
            }
        }
        return g;
    }
    const double inv_n = 1.0 / static_cast<double>(output.size());
    for (std::size_t i = 0; i < output.size(); ++i) {
        g[i] = 2.0 * (output[i] - targets[i]) * inv_n;
    }
    return g;
}

}  // namespace

double forward(const NetworkSpec& spec, const ParamVector& params, const Batch& batch,
               Mode mode, ForwardCache* cache, RunningStats* stats) {
    const auto shapes = spec.infer_shapes();
    if (batch.inputs.rank() != spec.input_shape.size() + 1) {
        throw DimensionError("batch input rank does not match network input shape");
    }
    for (std::size_t a = 0; a < spec.input_shape.size(); ++a) {
        if (batch.inputs.extent(a + 1) != spec.input_shape[a]) {
            throw DimensionError("batch input shape " + batch.inputs.shape_string() +
                                 " does not match network input " + shape_str(spec.input_shape));
        }
    }
    const std::size_t bsz = batch.inputs.extent(0);

    std::vector<Tensor> acts;
    acts.reserve(spec.layers.size() + 1);
    acts.push_back(batch.inputs);
    std::vector<ForwardCache::BnAux> bn_aux(cache != nullptr ? spec.layers.size() : 0);

    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        const Tensor& x = acts[i];
        Tensor y;
        const std::string prefix = "layer" + std::to_string(i);
        switch (l.kind) {
            case LayerSpec::Kind::dense:
                y = dense_forward(x, params.segment(prefix + ".weight"),
                                  params.segment(prefix + ".bias"), l.in, l.out);
                break;
            case LayerSpec::Kind::conv2d:
                y = conv_forward(x, params.segment(prefix + ".weight"),
                                 params.segment(prefix + ".bias"), l, shapes[i + 1]);
                break;
            case LayerSpec::Kind::batch_norm: {
                Tensor* rm = nullptr;
                Tensor* rv = nullptr;
                if (stats != nullptr && !stats->empty()) {
                    rm = &stats->mean[i];
                    rv = &stats->var[i];
                }
                if (mode == Mode::eval && (rm == nullptr || rm->size() == 0)) {
                    throw ConfigError("eval-mode forward through batch_norm layer " +
                                      std::to_string(i) + " requires running stats");
                }
                y = batch_norm_forward(x, params.segment(prefix + ".scale"),
                                       params.segment(prefix + ".shift"), l.eps, mode, rm, rv,
                                       l.momentum,
                                       cache != nullptr ? &bn_aux[i] : nullptr);
                break;
            }
            case LayerSpec::Kind::activation:
                y = map(x, [&l](double v) { return apply_activation(l.act, l.slope, v); });
                break;
            case LayerSpec::Kind::flatten: {
                std::vector<std::size_t> ns{bsz, shapes[i + 1][0]};
                y = Tensor(std::move(ns), x.values());
                break;
            }
        }
        for (std::size_t j = 0; j < spec.skip_edges.size(); ++j) {
            const SkipEdge& e = spec.skip_edges[j];
            if (e.to != i) continue;
            if (e.projected) {
                apply_projection(acts[e.from],
                                 params.segment("skip" + std::to_string(j) + ".weight"), y);
            } else {
                for (std::size_t v = 0; v < y.size(); ++v) y[v] += acts[e.from][v];
            }
        }
        acts.push_back(std::move(y));
    }

    const double loss = compute_loss(spec.loss, acts.back(), batch.targets);
    if (!std::isfinite(loss)) {
        throw DivergenceError("training loss is not finite (" + std::to_string(loss) + ")");
    }
    if (cache != nullptr) {
        cache->acts = std::move(acts);
        cache->bn_aux = std::move(bn_aux);
        cache->batch = batch;
        cache->mode = mode;
        cache->loss = loss;
    }
    return loss;
}

ParamVector backward(const NetworkSpec& spec, const ParamVector& params,
                     const ForwardCache& cache) {
    if (cache.mode != Mode::train) {
        throw ConfigError("backward requires a train-mode forward cache");
    }
    if (cache.acts.size() != spec.layers.size() + 1) {
        throw DimensionError("forward cache does not match network spec");
    }
    ParamVector grads = zeros_like(params);

    std::vector<Tensor> act_grads(cache.acts.size());
    for (std::size_t i = 0; i < cache.acts.size(); ++i) {
        act_grads[i] = Tensor(cache.acts[i].shape());
    }
    act_grads.back() = loss_backward(spec.loss, cache.acts.back(), cache.batch.targets);

    for (std::size_t ii = spec.layers.size(); ii-- > 0;) {
        const LayerSpec& l = spec.layers[ii];
        const Tensor& g = act_grads[ii + 1];
        const Tensor& x = cache.acts[ii];
        const std::string prefix = "layer" + std::to_string(ii);

        // Skip edges merging into this layer's output: route gradient back to
        // their source activations (and projection weights) first.
        for (std::size_t j = 0; j < spec.skip_edges.size(); ++j) {
            const SkipEdge& e = spec.skip_edges[j];
            if (e.to != ii) continue;
            Tensor& src_grad = act_grads[e.from];
            if (!e.projected) {
                for (std::size_t v = 0; v < g.size(); ++v) src_grad[v] += g[v];
                continue;
            }
            const std::string pname = "skip" + std::to_string(j) + ".weight";
            auto proj = params.segment(pname);
            auto dproj = grads.segment(pname);
            const Tensor& src = cache.acts[e.from];
            const std::size_t batch = src.extent(0);
            const std::size_t fin = src.extent(1);
            const std::size_t fout = g.extent(1);
            const std::size_t spatial = src.size() / (batch * fin);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t o = 0; o < fout; ++o) {
                    for (std::size_t s = 0; s < spatial; ++s) {
                        const double gv = g[(b * fout + o) * spatial + s];
                        for (std::size_t jj = 0; jj < fin; ++jj) {
                            const std::size_t si = (b * fin + jj) * spatial + s;
                            dproj[o * fin + jj] += gv * src[si];
                            src_grad[si] += gv * proj[o * fin + jj];
                        }
                    }
                }
            }
        }

        Tensor& dx = act_grads[ii];
        switch (l.kind) {
            case LayerSpec::Kind::dense: {
                auto w = params.segment(prefix + ".weight");
                auto dw = grads.segment(prefix + ".weight");
                auto db = grads.segment(prefix + ".bias");
                const std::size_t batch = x.extent(0);
                for (std::size_t b = 0; b < batch; ++b) {
                    const double* xb = x.data() + b * l.in;
                    const double* gb = g.data() + b * l.out;
                    double* dxb = dx.data() + b * l.in;
                    for (std::size_t o = 0; o < l.out; ++o) {
                        const double gv = gb[o];
                        db[o] += gv;
                        const double* wo = w.data() + o * l.in;
                        double* dwo = dw.data() + o * l.in;
                        for (std::size_t j = 0; j < l.in; ++j) {
                            dwo[j] += gv * xb[j];
                            dxb[j] += gv * wo[j];
                        }
                    }
                }
                break;
            }
            case LayerSpec::Kind::conv2d: {
                auto w = params.segment(prefix + ".weight");
                auto dw = grads.segment(prefix + ".weight");
                auto db = grads.segment(prefix + ".bias");
                const std::size_t batch = x.extent(0);
                const std::size_t h = x.extent(2), wid = x.extent(3);
                const std::size_t oh = g.extent(2), ow = g.extent(3);
                const std::size_t k = l.ksize;
                for (std::size_t b = 0; b < batch; ++b) {
                    const double* xb = x.data() + b * l.cin * h * wid;
                    double* dxb = dx.data() + b * l.cin * h * wid;
                    const double* gb = g.data() + b * l.cout * oh * ow;
                    for (std::size_t o = 0; o < l.cout; ++o) {
                        for (std::size_t oy = 0; oy < oh; ++oy) {
                            for (std::size_t ox = 0; ox < ow; ++ox) {
                                const double gv = gb[(o * oh + oy) * ow + ox];
                                db[o] += gv;
                                for (std::size_t c = 0; c < l.cin; ++c) {
                                    for (std::size_t u = 0; u < k; ++u) {
                                        const std::ptrdiff_t iy =
                                            static_cast<std::ptrdiff_t>(oy * l.stride + u) -
                                            static_cast<std::ptrdiff_t>(l.pad);
                                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
                                            continue;
                                        }
                                        for (std::size_t v = 0; v < k; ++v) {
                                            const std::ptrdiff_t ix =
                                                static_cast<std::ptrdiff_t>(ox * l.stride + v) -
                                                static_cast<std::ptrdiff_t>(l.pad);
                                            if (ix < 0 ||
                                                ix >= static_cast<std::ptrdiff_t>(wid)) {
                                                continue;
                                            }
                                            const std::size_t xi = (c * h + iy) * wid + ix;
                                            const std::size_t wi =
                                                ((o * l.cin + c) * k + u) * k + v;
                                            dw[wi] += gv * xb[xi];
                                            dxb[xi] += gv * w[wi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                break;
            }
            case LayerSpec::Kind::batch_norm: {
                const ForwardCache::BnAux& aux = cache.bn_aux[ii];
                auto sc = params.segment(prefix + ".scale");
                auto dsc = grads.segment(prefix + ".scale");
                auto dsh = grads.segment(prefix + ".shift");
                const BnGeometry geo = BnGeometry::of(x);
                const double m = static_cast<double>(geo.group_size);
                for (std::size_t f = 0; f < geo.features; ++f) {
                    double sum_g = 0.0, sum_gx = 0.0;
                    for (std::size_t b = 0; b < geo.batch; ++b) {
                        for (std::size_t s = 0; s < geo.spatial; ++s) {
                            const std::size_t i = geo.index(b, f, s);
                            sum_g += g[i];
                            sum_gx += g[i] * aux.xhat[i];
                        }
                    }
                    dsc[f] += sum_gx;
                    dsh[f] += sum_g;
                    const double coef = sc[f] * aux.inv_std[f];
                    for (std::size_t b = 0; b < geo.batch; ++b) {
                        for (std::size_t s = 0; s < geo.spatial; ++s) {
                            const std::size_t i = geo.index(b, f, s);
                            dx[i] += coef * (g[i] - sum_g / m - aux.xhat[i] * sum_gx / m);
                        }
                    }
                }
                break;
            }
            case LayerSpec::Kind::activation: {
                for (std::size_t i = 0; i < x.size(); ++i) {
                    dx[i] += g[i] * activation_grad(l.act, l.slope, x[i]);
                }
                break;
            }
            case LayerSpec::Kind::flatten: {
                for (std::size_t i = 0; i < x.size(); ++i) dx[i] += g[i];
                break;
            }
        }
    }
    return grads;
}

}  // namespace trajlens
