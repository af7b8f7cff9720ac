#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace drivelab::nn {

enum class HeadKind : std::uint8_t { Tanh = 0, Sigmoid = 1, Linear = 2 };
enum class LossKind : std::uint8_t { Squared = 0, Bce = 1 };

const char* to_string(HeadKind k);

struct Head {
    std::string name;
    HeadKind kind = HeadKind::Linear;
    int width = 1;

    bool operator==(const Head&) const = default;
};

// Feedforward shape: input -> hidden ReLU layers -> one output layer whose
// units are partitioned into heads, each with its own output nonlinearity.
struct NetSpec {
    int input_size = 0;
    std::vector<int> hidden;
    std::vector<Head> heads;
    std::uint64_t init_seed = 0;

    int output_size() const;
    std::vector<int> layer_widths() const;  // input, hidden..., output
    std::size_t param_count() const;
    void validate() const;  // throws std::invalid_argument

    bool operator==(const NetSpec&) const = default;
};

// Addressing into the flat parameter vector.
class ParamLayout {
  public:
    explicit ParamLayout(const NetSpec& spec);
    int layer_count() const { return static_cast<int>(in_.size()); }
    int fan_in(int layer) const { return in_[static_cast<std::size_t>(layer)]; }
    int fan_out(int layer) const { return out_[static_cast<std::size_t>(layer)]; }
    std::size_t weight_index(int layer, int out, int in) const {
        return weight_off_[static_cast<std::size_t>(layer)] +
               static_cast<std::size_t>(out) * static_cast<std::size_t>(in_[static_cast<std::size_t>(layer)]) +
               static_cast<std::size_t>(in);
    }
    std::size_t bias_index(int layer, int out) const {
        return bias_off_[static_cast<std::size_t>(layer)] + static_cast<std::size_t>(out);
    }
    std::size_t total() const { return total_; }

  private:
    std::vector<int> in_, out_;
    std::vector<std::size_t> weight_off_, bias_off_;
    std::size_t total_ = 0;
};

struct Params {
    std::vector<double> values;
};

// Glorot-uniform weights, zero biases, deterministic in spec.init_seed.
Params init_params(const NetSpec& spec);

struct ForwardResult {
    std::vector<double> outputs;                // post-nonlinearity, size output_size
    std::vector<std::vector<double>> hidden;    // post-ReLU activations per hidden layer
};

ForwardResult forward(const NetSpec& spec, const Params& params, std::span<const double> input);

struct Example {
    std::vector<double> input;
    std::vector<double> target;  // concatenated per-head targets
};

// One loss term per head, aligned with NetSpec::heads.
struct LossTerm {
    LossKind kind = LossKind::Squared;
    double weight = 1.0;
};
using LossSpec = std::vector<LossTerm>;

// Mean per-example loss over the batch.
double batch_loss(const NetSpec& spec, const Params& params, std::span<const Example> batch,
                  const LossSpec& loss);

// Exact gradient of batch_loss w.r.t. every parameter. Throws on a non-finite
// loss, naming the offending example index.
std::vector<double> backward(const NetSpec& spec, const Params& params,
                             std::span<const Example> batch, const LossSpec& loss);

struct TrainConfig {
    int batch_size = 64;
    double momentum = 0.9;
    double weight_decay = 0.001;
    double lr = 0.001;
    double lr_drop_factor = 5.0;
    int plateau_patience = 3;          // epochs without a new best before dropping lr
    double early_stop_rel = 0.05;      // stop when valid exceeds best by this fraction
    int max_epochs = 40;
    std::uint64_t shuffle_seed = 0;

    void validate() const;
};

// velocity <- momentum*velocity - lr*(grad + weight_decay*param); param += velocity
void sgd_step(Params& params, std::span<const double> grads, std::vector<double>& velocity,
              const TrainConfig& cfg);

struct EpochStats {
    int epoch = 0;
    double train_loss = 0;
    double valid_loss = 0;
    double lr = 0;
    bool new_best = false;
    bool lr_dropped = false;
};

struct TrainingHistory {
    std::vector<EpochStats> epochs;
    int best_epoch = -1;
    double best_valid_loss = 0;
    std::string stop_reason;  // "max_epochs" | "early_stop"
};

struct FitResult {
    Params params;  // from the best validation epoch
    TrainingHistory history;
};

FitResult fit(std::span<const Example> train_set, std::span<const Example> valid_set,
              const NetSpec& spec, const TrainConfig& cfg, const LossSpec& loss);

// Model file: magic, length-prefixed textual NetSpec (+ extra metadata),
// little-endian IEEE-754 doubles. Round-trips bit-exactly.
void save_model(const std::filesystem::path& path, const NetSpec& spec, const Params& params,
                const std::map<std::string, std::string>& meta = {});

struct LoadedModel {
    NetSpec spec;
    Params params;
    std::map<std::string, std::string> meta;
};
LoadedModel load_model(const std::filesystem::path& path);

}  // namespace drivelab::nn
