#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lgf/dataset_io.hpp"
#include "lgf/lgf_solver.hpp"
#include "lgf/ocn_layers.hpp"

namespace lgf::nn {

inline constexpr std::size_t kNumStages = 4;

struct NetworkConfig {
    std::array<std::size_t, kNumStages> stage_widths{10, 20, 40, 80};
    std::size_t kernel_size = 3;
    std::size_t n_orient = 4; // U
    std::size_t n_scale = 1;  // V: stage s uses landmark bank ⌊s·V/4⌋
    bool use_ocn = true;
    std::size_t image_size = 28;
    std::size_t hidden_units = 1024; // 0: the classifier reads the pooled features directly
    double dropout = 0.5;

    /// Throws InvalidArgument when the invariants do not hold.
    void validate() const;
};

/// "a-b-c-d" → {a, b, c, d}.
std::array<std::size_t, kNumStages> parse_widths(std::string_view text);
std::string format_widths(const std::array<std::size_t, kNumStages>& widths);

struct TrainConfig {
    std::size_t batch_size = 128;
    double weight_decay = 0.00005;
    double lr = 0.001;
    std::size_t lr_halving_period_epochs = 10;
    std::size_t epochs = 10; // 0 leaves the network untouched
    std::uint64_t seed = 0;

    void validate() const;
};

/// lr·2^−⌊epoch/period⌋, epoch counted from 0.
double learning_rate_at(const TrainConfig& tc, std::size_t epoch);

/// Spatial size after the four 2×2 pools (floor each time).
std::size_t head_spatial_size(std::size_t image_size);
/// Learnable scalars implied by the config: stored filters plus the classifier.
std::size_t analytic_param_count(const NetworkConfig& nc);

struct Parameter {
    std::span<double> values;
    std::size_t fan_in = 0;
    bool is_bias = false;
};

class Network {
public:
    /// Weights start at zero; build_network draws them.
    Network(const NetworkConfig& nc, std::span<const LandmarkBank> banks);
    /// Assembles a network from stored parts (checkpoint loading).
    Network(const NetworkConfig& nc, std::vector<OcnLayer> ocn, std::vector<Conv2d> conv, std::optional<Linear> hidden,
            Linear head);

    const NetworkConfig& config() const noexcept { return config_; }
    const std::vector<OcnLayer>& ocn_stages() const noexcept { return ocn_; }
    const std::vector<Conv2d>& conv_stages() const noexcept { return conv_; }
    const std::optional<Linear>& hidden() const noexcept { return hidden_; }
    const Linear& head() const noexcept { return head_; }

    /// Every learnable buffer in a fixed order: stages, hidden weights and
    /// bias, classifier weights and bias.
    std::vector<Parameter> parameters();
    std::vector<std::span<const double>> parameters() const;
    /// Counted from the buffers.
    std::size_t param_count() const;

    /// images: (batch, 1, S, S). Dropout is active only when training.
    Matrix forward(const Tensor4& images, bool training, std::mt19937_64& rng);
    /// Gradients of the last forward pass, in parameters() order.
    std::vector<std::vector<double>> backward(const Matrix& grad_logits);

private:
    struct StageCache {
        Tensor4 pre_activation;
        Tensor4::Dims pool_input;
        std::vector<std::size_t> pool_argmax;
    };

    NetworkConfig config_;
    std::vector<OcnLayer> ocn_;
    std::vector<Conv2d> conv_;
    std::optional<Linear> hidden_;
    Linear head_;

    std::array<StageCache, kNumStages> cache_;
    Tensor4::Dims head_input_dims_{};
    std::vector<std::size_t> orient_argmax_;
    Tensor4::Dims orient_input_dims_{};
    Matrix features_;
    Matrix hidden_pre_;
    Matrix classifier_input_;
    std::vector<double> dropout_mask_;
};

/// Validates the config and banks, then draws every weight from
/// U(−√(6/fan_in), √(6/fan_in)); biases start at zero. Head: flatten,
/// optional hidden layer with ReLU, dropout, linear to 10.
Network build_network(const NetworkConfig& nc, std::span<const LandmarkBank> banks, std::uint64_t seed);

/// The listed images as a (count, 1, rows, cols) tensor.
Tensor4 image_batch(const data::ImageSet& images, std::span<const std::size_t> items);

struct EpochRecord {
    std::size_t epoch = 0; // 1-based
    double train_loss = 0.0;
    std::optional<double> test_error; // percent
    double lr = 0.0;
    double seconds = 0.0;
};

struct TrainResult {
    std::vector<double> loss_curve; // one entry per mini-batch
    std::vector<EpochRecord> epochs;
};

struct Rotation {
    std::vector<double> angles_degrees;
    std::uint64_t seed = 0;
};

struct EvalReport {
    double error_rate = 0.0;                 // percent
    std::array<double, 10> per_class_errors{}; // percent of each class, 0 when absent
    std::size_t count = 0;
    double wall_time_s = 0.0;
    std::size_t param_count = 0;
};

/// Plain SGD with weight decay on weights (not biases). Throws NumericalError
/// when a batch loss or a parameter becomes non-finite.
TrainResult train(Network& net, const data::LabeledImages& data, const TrainConfig& tc,
                  const data::LabeledImages* test = nullptr, const std::optional<Rotation>& test_rotation = std::nullopt,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Dropout off. With a rotation, image i is rotated by a seeded draw from the list first.
EvalReport evaluate(Network& net, const data::LabeledImages& data, const std::optional<Rotation>& rotation = std::nullopt);

std::vector<int> predict(Network& net, const data::ImageSet& images);

// Checkpoint: "OCNM", u32 version, the config, the modulator stacks and all
// parameters (f64, little-endian).
void save_checkpoint(const Network& net, const std::filesystem::path& path);
Network load_checkpoint(const std::filesystem::path& path);

/// `epoch,train_loss,test_error,lr,seconds`; test_error is empty when not measured.
void write_epoch_csv(std::span<const EpochRecord> epochs, const std::filesystem::path& path);

} // namespace lgf::nn
