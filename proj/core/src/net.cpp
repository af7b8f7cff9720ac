#include "drivelab/net.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "drivelab/rng.hpp"

namespace drivelab::nn {

const char* to_string(HeadKind k) {
    switch (k) {
        case HeadKind::Tanh: return "tanh";
        case HeadKind::Sigmoid: return "sigmoid";
        case HeadKind::Linear: return "linear";
    }
    return "?";
}

int NetSpec::output_size() const {
    int n = 0;
    for (const auto& h : heads) n += h.width;
    return n;
}

std::vector<int> NetSpec::layer_widths() const {
    std::vector<int> w;
    w.push_back(input_size);
    for (int h : hidden) w.push_back(h);
    w.push_back(output_size());
    return w;
}

std::size_t NetSpec::param_count() const { return ParamLayout(*this).total(); }

void NetSpec::validate() const {
    if (input_size < 1) throw std::invalid_argument("NetSpec: input_size must be >= 1");
    for (int h : hidden)
        if (h < 1) throw std::invalid_argument("NetSpec: hidden widths must be >= 1");
    if (heads.empty()) throw std::invalid_argument("NetSpec: at least one head required");
    for (const auto& h : heads)
        if (h.width < 1) throw std::invalid_argument("NetSpec: head widths must be >= 1");
}

ParamLayout::ParamLayout(const NetSpec& spec) {
    const auto widths = spec.layer_widths();
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        in_.push_back(widths[l]);
        out_.push_back(widths[l + 1]);
        weight_off_.push_back(off);
        off += static_cast<std::size_t>(widths[l]) * static_cast<std::size_t>(widths[l + 1]);
        bias_off_.push_back(off);
        off += static_cast<std::size_t>(widths[l + 1]);
    }
    total_ = off;
}

Params init_params(const NetSpec& spec) {
    spec.validate();
    const ParamLayout layout(spec);
    Params p;
    p.values.assign(layout.total(), 0.0);
    Rng rng(spec.init_seed);
    for (int l = 0; l < layout.layer_count(); ++l) {
        const double limit = std::sqrt(6.0 / (layout.fan_in(l) + layout.fan_out(l)));
        for (int o = 0; o < layout.fan_out(l); ++o)
            for (int i = 0; i < layout.fan_in(l); ++i)
                p.values[layout.weight_index(l, o, i)] = rng.uniform(-limit, limit);
        // biases stay zero
    }
    return p;
}

namespace {

struct Scratch {
    // act[0] = input copy, act[l+1] = post-activation of layer l
    std::vector<std::vector<double>> act;
    std::vector<std::vector<double>> delta;  // per layer output
    std::vector<double> final_pre;           // output layer pre-activations (== act.back() source)
};

void ensure_scratch(Scratch& s, const std::vector<int>& widths) {
    s.act.resize(widths.size());
    for (std::size_t i = 0; i < widths.size(); ++i)
        s.act[i].resize(static_cast<std::size_t>(widths[i]));
    s.delta.resize(widths.size() - 1);
    for (std::size_t i = 0; i + 1 < widths.size(); ++i)
        s.delta[i].resize(static_cast<std::size_t>(widths[i + 1]));
    s.final_pre.resize(static_cast<std::size_t>(widths.back()));
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Forward pass into scratch; returns nothing, outputs live in s.act.back().
void forward_scratch(const NetSpec& spec, const ParamLayout& layout, const Params& params,
                     std::span<const double> input, Scratch& s) {
    const double* pv = params.values.data();
    std::copy(input.begin(), input.end(), s.act[0].begin());
    const int layers = layout.layer_count();
    for (int l = 0; l < layers; ++l) {
        const auto& x = s.act[static_cast<std::size_t>(l)];
        auto& y = s.act[static_cast<std::size_t>(l) + 1];
        const int nin = layout.fan_in(l);
        const int nout = layout.fan_out(l);
        const double* w = pv + layout.weight_index(l, 0, 0);
        const double* b = pv + layout.bias_index(l, 0);
        const bool last = l == layers - 1;
        for (int o = 0; o < nout; ++o) {
            const double* row = w + static_cast<std::size_t>(o) * static_cast<std::size_t>(nin);
            double z = b[o];
            for (int i = 0; i < nin; ++i) z += row[i] * x[static_cast<std::size_t>(i)];
            if (last) {
                s.final_pre[static_cast<std::size_t>(o)] = z;
            } else {
                y[static_cast<std::size_t>(o)] = z > 0.0 ? z : 0.0;
            }
        }
        if (last) {
            int off = 0;
            for (const auto& head : spec.heads) {
                for (int k = 0; k < head.width; ++k) {
                    const double z = s.final_pre[static_cast<std::size_t>(off + k)];
                    double v = z;
                    if (head.kind == HeadKind::Tanh) v = std::tanh(z);
                    else if (head.kind == HeadKind::Sigmoid) v = sigmoid(z);
                    y[static_cast<std::size_t>(off + k)] = v;
                }
                off += head.width;
            }
        }
    }
}

constexpr double kProbFloor = 1e-12;

double example_loss(const NetSpec& spec, const LossSpec& loss,
                    std::span<const double> outputs, std::span<const double> target) {
    double total = 0;
    int off = 0;
    for (std::size_t h = 0; h < spec.heads.size(); ++h) {
        const auto& head = spec.heads[h];
        const auto& term = loss[h];
        double acc = 0;
        for (int k = 0; k < head.width; ++k) {
            const double y = outputs[static_cast<std::size_t>(off + k)];
            const double t = target[static_cast<std::size_t>(off + k)];
            if (term.kind == LossKind::Squared) {
                const double d = y - t;
                acc += d * d;
            } else {
                const double p = std::clamp(y, kProbFloor, 1.0 - kProbFloor);
                acc += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
            }
        }
        total += term.weight * acc;
        off += head.width;
    }
    return total;
}

// Accumulates the gradient of one example (unscaled) into grad; returns the
// example loss.
double backward_example(const NetSpec& spec, const ParamLayout& layout, const Params& params,
                        const Example& ex, const LossSpec& loss, Scratch& s,
                        std::vector<double>& grad) {
    forward_scratch(spec, layout, params, ex.input, s);
    const auto& outputs = s.act.back();
    const double l = example_loss(spec, loss, outputs, ex.target);

    const int layers = layout.layer_count();
    auto& dout = s.delta[static_cast<std::size_t>(layers - 1)];
    int off = 0;
    for (std::size_t h = 0; h < spec.heads.size(); ++h) {
        const auto& head = spec.heads[h];
        const auto& term = loss[h];
        for (int k = 0; k < head.width; ++k) {
            const std::size_t idx = static_cast<std::size_t>(off + k);
            const double y = outputs[idx];
            const double t = ex.target[idx];
            double dz;
            if (term.kind == LossKind::Bce) {
                // bce through sigmoid: d/dz = p - t
                dz = term.weight * (y - t);
                if (head.kind != HeadKind::Sigmoid) {
                    // bce on a non-sigmoid head is rejected at validation time
                    dz = 0.0;
                }
            } else {
                double dy = term.weight * 2.0 * (y - t);
                if (head.kind == HeadKind::Tanh) dy *= (1.0 - y * y);
                else if (head.kind == HeadKind::Sigmoid) dy *= y * (1.0 - y);
                dz = dy;
            }
            dout[idx] = dz;
        }
        off += head.width;
    }

    double* gv = grad.data();
    const double* pv = params.values.data();
    for (int l2 = layers - 1; l2 >= 0; --l2) {
        const int nin = layout.fan_in(l2);
        const int nout = layout.fan_out(l2);
        const auto& x = s.act[static_cast<std::size_t>(l2)];
        const auto& dz = s.delta[static_cast<std::size_t>(l2)];
        double* gw = gv + layout.weight_index(l2, 0, 0);
        double* gb = gv + layout.bias_index(l2, 0);
        for (int o = 0; o < nout; ++o) {
            const double d = dz[static_cast<std::size_t>(o)];
            if (d != 0.0) {
                double* row = gw + static_cast<std::size_t>(o) * static_cast<std::size_t>(nin);
                for (int i = 0; i < nin; ++i) row[i] += d * x[static_cast<std::size_t>(i)];
            }
            gb[o] += d;
        }
        if (l2 > 0) {
            auto& dx = s.delta[static_cast<std::size_t>(l2 - 1)];
            std::fill(dx.begin(), dx.end(), 0.0);
            const double* w = pv + layout.weight_index(l2, 0, 0);
            for (int o = 0; o < nout; ++o) {
                const double d = dz[static_cast<std::size_t>(o)];
                if (d == 0.0) continue;
                const double* row = w + static_cast<std::size_t>(o) * static_cast<std::size_t>(nin);
                for (int i = 0; i < nin; ++i) dx[static_cast<std::size_t>(i)] += d * row[i];
            }
            // ReLU mask of the previous layer's activation
            for (int i = 0; i < nin; ++i)
                if (x[static_cast<std::size_t>(i)] <= 0.0) dx[static_cast<std::size_t>(i)] = 0.0;
        }
    }
    return l;
}

void check_loss_spec(const NetSpec& spec, const LossSpec& loss) {
    if (loss.size() != spec.heads.size())
        throw std::invalid_argument("loss spec must have one term per head");
    for (std::size_t h = 0; h < loss.size(); ++h) {
        if (loss[h].kind == LossKind::Bce && spec.heads[h].kind != HeadKind::Sigmoid)
            throw std::invalid_argument("bce loss requires a sigmoid head (head '" +
                                        spec.heads[h].name + "')");
    }
}

}  // namespace

ForwardResult forward(const NetSpec& spec, const Params& params, std::span<const double> input) {
    spec.validate();
    if (static_cast<int>(input.size()) != spec.input_size)
        throw std::invalid_argument("forward: input size mismatch");
    const ParamLayout layout(spec);
    if (params.values.size() != layout.total())
        throw std::invalid_argument("forward: param count mismatch");
    Scratch s;
    ensure_scratch(s, spec.layer_widths());
    forward_scratch(spec, layout, params, input, s);
    ForwardResult r;
    r.outputs = s.act.back();
    for (std::size_t l = 1; l + 1 < s.act.size(); ++l) r.hidden.push_back(s.act[l]);
    return r;
}

double batch_loss(const NetSpec& spec, const Params& params, std::span<const Example> batch,
                  const LossSpec& loss) {
    check_loss_spec(spec, loss);
    if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
    const ParamLayout layout(spec);
    Scratch s;
    ensure_scratch(s, spec.layer_widths());
    double total = 0;
    for (const auto& ex : batch) {
        forward_scratch(spec, layout, params, ex.input, s);
        total += example_loss(spec, loss, s.act.back(), ex.target);
    }
    return total / static_cast<double>(batch.size());
}

std::vector<double> backward(const NetSpec& spec, const Params& params,
                             std::span<const Example> batch, const LossSpec& loss) {
    check_loss_spec(spec, loss);
    if (batch.empty()) throw std::invalid_argument("backward: empty batch");
    const ParamLayout layout(spec);
    Scratch s;
    ensure_scratch(s, spec.layer_widths());
    std::vector<double> grad(layout.total(), 0.0);
    for (std::size_t n = 0; n < batch.size(); ++n) {
        const double l = backward_example(spec, layout, params, batch[n], loss, s, grad);
        if (!std::isfinite(l))
            throw std::runtime_error("backward: non-finite loss at example " + std::to_string(n));
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (double& g : grad) g *= inv;
    return grad;
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (lr <= 0) throw std::invalid_argument("TrainConfig: lr must be > 0");
    if (momentum < 0) throw std::invalid_argument("TrainConfig: momentum must be >= 0");
    if (weight_decay < 0) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
    if (lr_drop_factor <= 1) throw std::invalid_argument("TrainConfig: lr_drop_factor must be > 1");
    if (plateau_patience < 1) throw std::invalid_argument("TrainConfig: plateau_patience must be >= 1");
    if (early_stop_rel <= 0) throw std::invalid_argument("TrainConfig: early_stop_rel must be > 0");
    if (max_epochs < 1) throw std::invalid_argument("TrainConfig: max_epochs must be >= 1");
}

void sgd_step(Params& params, std::span<const double> grads, std::vector<double>& velocity,
              const TrainConfig& cfg) {
    if (grads.size() != params.values.size() || velocity.size() != params.values.size())
        throw std::invalid_argument("sgd_step: shape mismatch");
    for (std::size_t i = 0; i < params.values.size(); ++i) {
        velocity[i] = cfg.momentum * velocity[i] -
                      cfg.lr * (grads[i] + cfg.weight_decay * params.values[i]);
        params.values[i] += velocity[i];
    }
}

FitResult fit(std::span<const Example> train_set, std::span<const Example> valid_set,
              const NetSpec& spec, const TrainConfig& cfg, const LossSpec& loss) {
    spec.validate();
    cfg.validate();
    check_loss_spec(spec, loss);
    if (train_set.empty() || valid_set.empty())
        throw std::invalid_argument("fit: train and validation sets must be non-empty");

    const ParamLayout layout(spec);
    Params params = init_params(spec);
    std::vector<double> velocity(layout.total(), 0.0);
    std::vector<double> grad(layout.total(), 0.0);
    Scratch s;
    ensure_scratch(s, spec.layer_widths());

    Rng shuffle_rng(derive_seed(cfg.shuffle_seed, "fit-shuffle"));
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    FitResult result;
    TrainConfig live = cfg;
    Params best_params = params;
    double best_valid = std::numeric_limits<double>::infinity();
    int epochs_since_best = 0;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        // Fisher-Yates with the run rng
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j = shuffle_rng.uniform_int(i);
            std::swap(order[i - 1], order[j]);
        }

        double train_loss_sum = 0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(live.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(live.batch_size));
            std::fill(grad.begin(), grad.end(), 0.0);
            double batch_sum = 0;
            for (std::size_t n = start; n < end; ++n) {
                const double l = backward_example(spec, layout, params, train_set[order[n]],
                                                  loss, s, grad);
                if (!std::isfinite(l))
                    throw std::runtime_error("fit: diverged (non-finite loss) at epoch " +
                                             std::to_string(epoch));
                batch_sum += l;
            }
            const double inv = 1.0 / static_cast<double>(end - start);
            for (double& g : grad) g *= inv;
            sgd_step(params, grad, velocity, live);
            train_loss_sum += batch_sum;
            seen += end - start;
        }
        const double train_loss = train_loss_sum / static_cast<double>(seen);

        double valid_sum = 0;
        for (const auto& ex : valid_set) {
            forward_scratch(spec, layout, params, ex.input, s);
            valid_sum += example_loss(spec, loss, s.act.back(), ex.target);
        }
        const double valid_loss = valid_sum / static_cast<double>(valid_set.size());
        if (!std::isfinite(valid_loss))
            throw std::runtime_error("fit: diverged (non-finite validation loss) at epoch " +
                                     std::to_string(epoch));

        EpochStats es;
        es.epoch = epoch;
        es.train_loss = train_loss;
        es.valid_loss = valid_loss;
        es.lr = live.lr;

        const bool new_best = valid_loss < best_valid;
        if (new_best) {
            best_valid = valid_loss;
            best_params = params;
            result.history.best_epoch = epoch;
            epochs_since_best = 0;
        } else {
            ++epochs_since_best;
        }
        es.new_best = new_best;

        if (!new_best && valid_loss > best_valid * (1.0 + cfg.early_stop_rel)) {
            result.history.epochs.push_back(es);
            result.history.stop_reason = "early_stop";
            break;
        }
        if (!new_best && epochs_since_best >= cfg.plateau_patience) {
            live.lr /= cfg.lr_drop_factor;
            epochs_since_best = 0;
            es.lr_dropped = true;
        }
        result.history.epochs.push_back(es);
    }
    if (result.history.stop_reason.empty()) result.history.stop_reason = "max_epochs";
    result.history.best_valid_loss = best_valid;
    result.params = std::move(best_params);
    return result;
}

// ---------------------------------------------------------------------------
// model file

namespace {

constexpr char kMagic[8] = {'D', 'L', 'N', 'E', 'T', '0', '0', '1'};

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t read_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

std::string spec_to_text(const NetSpec& spec, const std::map<std::string, std::string>& meta) {
    std::ostringstream out;
    out << "input=" << spec.input_size << "\n";
    out << "hidden=";
    for (std::size_t i = 0; i < spec.hidden.size(); ++i)
        out << (i ? "," : "") << spec.hidden[i];
    out << "\n";
    out << "heads=";
    for (std::size_t i = 0; i < spec.heads.size(); ++i) {
        out << (i ? "," : "") << spec.heads[i].name << ":" << to_string(spec.heads[i].kind)
            << ":" << spec.heads[i].width;
    }
    out << "\n";
    out << "seed=" << spec.init_seed << "\n";
    for (const auto& [k, v] : meta) out << "meta." << k << "=" << v << "\n";
    return out.str();
}

std::pair<NetSpec, std::map<std::string, std::string>> spec_from_text(const std::string& text) {
    NetSpec spec;
    std::map<std::string, std::string> meta;
    std::istringstream in(text);
    std::string line;
    auto split = [](const std::string& s, char sep) {
        std::vector<std::string> parts;
        std::string cur;
        for (char ch : s) {
            if (ch == sep) {
                parts.push_back(cur);
                cur.clear();
            } else {
                cur += ch;
            }
        }
        if (!cur.empty()) parts.push_back(cur);
        return parts;
    };
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error("model header: bad line " + line);
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (key == "input") {
            spec.input_size = std::stoi(value);
        } else if (key == "hidden") {
            for (const auto& p : split(value, ',')) spec.hidden.push_back(std::stoi(p));
        } else if (key == "heads") {
            for (const auto& p : split(value, ',')) {
                const auto f = split(p, ':');
                if (f.size() != 3) throw std::runtime_error("model header: bad head " + p);
                Head h;
                h.name = f[0];
                if (f[1] == "tanh") h.kind = HeadKind::Tanh;
                else if (f[1] == "sigmoid") h.kind = HeadKind::Sigmoid;
                else if (f[1] == "linear") h.kind = HeadKind::Linear;
                else throw std::runtime_error("model header: bad head kind " + f[1]);
                h.width = std::stoi(f[2]);
                spec.heads.push_back(h);
            }
        } else if (key == "seed") {
            spec.init_seed = std::stoull(value);
        } else if (key.rfind("meta.", 0) == 0) {
            meta[key.substr(5)] = value;
        } else {
            throw std::runtime_error("model header: unknown key " + key);
        }
    }
    return {spec, meta};
}

}  // namespace

void save_model(const std::filesystem::path& path, const NetSpec& spec, const Params& params,
                const std::map<std::string, std::string>& meta) {
    spec.validate();
    if (params.values.size() != spec.param_count())
        throw std::invalid_argument("save_model: param count mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_model: cannot open " + path.string());
    out.write(kMagic, sizeof(kMagic));
    const std::string header = spec_to_text(spec, meta);
    write_u32(out, static_cast<std::uint32_t>(header.size()));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    write_u64(out, params.values.size());
    for (double v : params.values) write_u64(out, std::bit_cast<std::uint64_t>(v));
    if (!out) throw std::runtime_error("save_model: write failed for " + path.string());
}

LoadedModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_model: cannot open " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("load_model: bad magic in " + path.string());
    const std::uint32_t hlen = read_u32(in);
    std::string header(hlen, '\0');
    in.read(header.data(), hlen);
    LoadedModel m;
    auto [spec, meta] = spec_from_text(header);
    m.spec = std::move(spec);
    m.meta = std::move(meta);
    const std::uint64_t count = read_u64(in);
    if (count != m.spec.param_count())
        throw std::runtime_error("load_model: parameter count does not match NetSpec in " +
                                 path.string());
    m.params.values.resize(count);
    for (std::uint64_t i = 0; i < count; ++i)
        m.params.values[i] = std::bit_cast<double>(read_u64(in));
    if (!in) throw std::runtime_error("load_model: truncated file " + path.string());
    return m;
}

}  // namespace drivelab::nn
