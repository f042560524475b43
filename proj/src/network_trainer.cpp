#include "lgf/network_trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "binary_io.hpp"
#include "lgf/error.hpp"
#include "lgf/rng.hpp"

namespace lgf::nn {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::size_t kEvalBatch = 256;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::size_t stage_input_channels(const NetworkConfig& nc, std::size_t s) {
    return s == 0 ? 1 : nc.stage_widths[s - 1];
}

std::size_t head_features(const NetworkConfig& nc) {
    const std::size_t f = head_spatial_size(nc.image_size);
    return nc.stage_widths[kNumStages - 1] * f * f;
}

void fill_uniform(std::span<double> w, std::size_t fan_in, std::mt19937_64& g) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& x : w) x = rng::uniform(g, -bound, bound);
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

} // namespace

void NetworkConfig::validate() const {
    for (std::size_t w : stage_widths)
        if (w == 0) throw InvalidArgument("stage widths must be positive");
    if (kernel_size != 3 && kernel_size != 5 && kernel_size != 7)
        throw InvalidArgument("kernel size must be 3, 5 or 7, got " + std::to_string(kernel_size));
    if (use_ocn && n_orient == 0) throw InvalidArgument("n_orient must be positive");
    if (use_ocn && (n_scale == 0 || n_scale > kNumStages))
        throw InvalidArgument("n_scale must lie in [1, " + std::to_string(kNumStages) + "]");
    if (head_spatial_size(image_size) == 0)
        throw InvalidArgument("image size " + std::to_string(image_size) + " is too small for four 2x2 pools");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("dropout rate must lie in [0, 1)");
}

std::array<std::size_t, kNumStages> parse_widths(std::string_view text) {
    std::array<std::size_t, kNumStages> out{};
    std::size_t k = 0, pos = 0;
    while (true) {
        const std::size_t dash = text.find('-', pos);
        const std::string_view part = text.substr(pos, dash == std::string_view::npos ? text.npos : dash - pos);
        if (k == kNumStages || part.empty() || part.size() > 9 ||
            !std::all_of(part.begin(), part.end(), [](char c) { return c >= '0' && c <= '9'; }))
            throw InvalidArgument("widths must look like a-b-c-d, got '" + std::string(text) + "'");
        out[k++] = std::stoul(std::string(part));
        if (dash == std::string_view::npos) break;
        pos = dash + 1;
    }
    if (k != kNumStages) throw InvalidArgument("widths must have four entries, got '" + std::string(text) + "'");
    return out;
}

std::string format_widths(const std::array<std::size_t, kNumStages>& widths) {
    std::string s;
    for (std::size_t i = 0; i < widths.size(); ++i) s += (i ? "-" : "") + std::to_string(widths[i]);
    return s;
}

void TrainConfig::validate() const {
    if (batch_size == 0) throw InvalidArgument("batch size must be positive");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw InvalidArgument("learning rate must be positive");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw InvalidArgument("weight decay must be >= 0");
    if (lr_halving_period_epochs == 0) throw InvalidArgument("lr halving period must be positive");
}

double learning_rate_at(const TrainConfig& tc, std::size_t epoch) {
    return std::ldexp(tc.lr, -static_cast<int>(epoch / tc.lr_halving_period_epochs));
}

std::size_t head_spatial_size(std::size_t image_size) {
    for (std::size_t s = 0; s < kNumStages; ++s) image_size /= 2;
    return image_size;
}

std::size_t analytic_param_count(const NetworkConfig& nc) {
    nc.validate();
    const std::size_t k2 = nc.kernel_size * nc.kernel_size;
    const std::size_t orient = nc.use_ocn ? nc.n_orient : 1;
    std::size_t n = 0;
    for (std::size_t s = 0; s < kNumStages; ++s) n += nc.stage_widths[s] * stage_input_channels(nc, s) * orient * k2;
    const std::size_t h = nc.hidden_units;
    if (h > 0) n += head_features(nc) * h + h;
    return n + (h > 0 ? h : head_features(nc)) * data::kNumClasses + data::kNumClasses;
}

Network::Network(const NetworkConfig& nc, std::span<const LandmarkBank> banks) : config_(nc) {
    nc.validate();
    const std::size_t k = nc.kernel_size;
    if (nc.use_ocn) {
        if (banks.size() != nc.n_scale)
            throw InvalidArgument("expected " + std::to_string(nc.n_scale) + " landmark bank(s), got " +
                                  std::to_string(banks.size()));
        for (const LandmarkBank& b : banks)
            if (b.spec.kernel_size != k)
                throw InvalidArgument("landmark bank kernel size " + std::to_string(b.spec.kernel_size) +
                                      " does not match network kernel size " + std::to_string(k));
        for (std::size_t s = 0; s < kNumStages; ++s) {
            const LandmarkBank& bank = banks[s * nc.n_scale / kNumStages];
            ocn_.emplace_back(LearnedFilter(nc.stage_widths[s], stage_input_channels(nc, s), nc.n_orient, k),
                              build_modulator(bank, nc.n_orient, bank.scale_index, k));
        }
    } else {
        for (std::size_t s = 0; s < kNumStages; ++s) conv_.emplace_back(stage_input_channels(nc, s), nc.stage_widths[s], k);
    }
    if (nc.hidden_units > 0) hidden_ = Linear(head_features(nc), nc.hidden_units);
    head_ = Linear(nc.hidden_units > 0 ? nc.hidden_units : head_features(nc), data::kNumClasses);
}

Network::Network(const NetworkConfig& nc, std::vector<OcnLayer> ocn, std::vector<Conv2d> conv, std::optional<Linear> hidden,
                 Linear head)
    : config_(nc), ocn_(std::move(ocn)), conv_(std::move(conv)), hidden_(std::move(hidden)), head_(std::move(head)) {
    nc.validate();
    const std::size_t k = nc.kernel_size;
    if (nc.use_ocn) {
        if (ocn_.size() != kNumStages || !conv_.empty()) throw InvalidArgument("OCN network needs four OCN stages");
        for (std::size_t s = 0; s < kNumStages; ++s) {
            const OcnLayer& l = ocn_[s];
            if (l.learned.c_out != nc.stage_widths[s] || l.learned.c_in != stage_input_channels(nc, s) ||
                l.learned.n_orient != nc.n_orient || l.learned.width != k || l.modulator.n_orient != nc.n_orient)
                throw InvalidArgument("OCN stage " + std::to_string(s) + " does not match the config");
        }
    } else {
        if (conv_.size() != kNumStages || !ocn_.empty()) throw InvalidArgument("CNN needs four conv stages");
        for (std::size_t s = 0; s < kNumStages; ++s)
            if (conv_[s].c_out != nc.stage_widths[s] || conv_[s].c_in != stage_input_channels(nc, s) || conv_[s].kernel != k)
                throw InvalidArgument("conv stage " + std::to_string(s) + " does not match the config");
    }
    if (hidden_.has_value() != (nc.hidden_units > 0) ||
        (hidden_ && (hidden_->in != head_features(nc) || hidden_->out != nc.hidden_units)))
        throw InvalidArgument("hidden layer shape does not match the config");
    const std::size_t head_in = nc.hidden_units > 0 ? nc.hidden_units : head_features(nc);
    if (head_.in != head_in || head_.out != static_cast<std::size_t>(data::kNumClasses))
        throw InvalidArgument("classifier shape does not match the config");
}

std::vector<Parameter> Network::parameters() {
    const std::size_t k2 = config_.kernel_size * config_.kernel_size;
    std::vector<Parameter> p;
    for (std::size_t s = 0; s < ocn_.size(); ++s)
        p.push_back({ocn_[s].learned.weights, stage_input_channels(config_, s) * config_.n_orient * k2, false});
    for (std::size_t s = 0; s < conv_.size(); ++s) p.push_back({conv_[s].weights, stage_input_channels(config_, s) * k2, false});
    for (Linear* l : {hidden_ ? &*hidden_ : nullptr, &head_}) {
        if (!l) continue;
        p.push_back({{l->weights.data(), l->weights.size()}, l->in, false});
        p.push_back({l->bias, l->in, true});
    }
    return p;
}

std::vector<std::span<const double>> Network::parameters() const {
    std::vector<std::span<const double>> out;
    for (const Parameter& p : const_cast<Network&>(*this).parameters()) out.emplace_back(p.values);
    return out;
}

std::size_t Network::param_count() const {
    std::size_t n = 0;
    for (auto p : parameters()) n += p.size();
    return n;
}

Matrix Network::forward(const Tensor4& images, bool training, std::mt19937_64& rng) {
    const std::size_t s_in = config_.image_size;
    if (images.dim(1) != 1 || images.dim(2) != s_in || images.dim(3) != s_in)
        throw InvalidArgument("network expects (batch, 1, " + std::to_string(s_in) + ", " + std::to_string(s_in) + ") input");
    const bool ocn = config_.use_ocn;
    Tensor4 x = ocn ? replicate_orientations(images, config_.n_orient) : images;
    for (std::size_t s = 0; s < kNumStages; ++s) {
        StageCache& c = cache_[s];
        c.pre_activation = ocn ? ocn_forward(ocn_[s], x) : conv_forward(conv_[s], x);
        const Tensor4 a = relu_forward(c.pre_activation);
        PoolResult p = maxpool2_forward(a);
        c.pool_input = a.dims();
        c.pool_argmax = std::move(p.argmax);
        x = std::move(p.output);
    }
    if (ocn) {
        orient_input_dims_ = x.dims();
        PoolResult p = orientation_maxpool_forward(x, config_.n_orient);
        orient_argmax_ = std::move(p.argmax);
        x = std::move(p.output);
    }
    head_input_dims_ = x.dims();
    features_ = flatten(x);
    if (hidden_) {
        hidden_pre_ = linear_forward(*hidden_, features_);
        classifier_input_ = hidden_pre_;
        for (double& v : classifier_input_.values()) v = v > 0.0 ? v : 0.0;
    } else {
        classifier_input_ = features_;
    }
    dropout_mask_.clear();
    if (training && config_.dropout > 0.0) {
        DropoutResult d = dropout_forward(classifier_input_, config_.dropout, rng);
        classifier_input_ = std::move(d.output);
        dropout_mask_ = std::move(d.mask);
    }
    return linear_forward(head_, classifier_input_);
}

std::vector<std::vector<double>> Network::backward(const Matrix& grad_logits) {
    if (classifier_input_.rows() != grad_logits.rows() || grad_logits.rows() == 0)
        throw InvalidArgument("backward: run forward on the same batch first");
    std::vector<std::vector<double>> grads(kNumStages);
    auto store = [&grads](LinearGrads& lg) {
        grads.emplace_back(lg.weights.values().begin(), lg.weights.values().end());
        grads.push_back(std::move(lg.bias));
    };
    LinearGrads lg = linear_backward(head_, classifier_input_, grad_logits);
    Matrix g = dropout_mask_.empty() ? std::move(lg.input) : dropout_backward(dropout_mask_, lg.input);
    if (hidden_) {
        const auto pre = hidden_pre_.values();
        auto gv = g.values();
        for (std::size_t i = 0; i < gv.size(); ++i)
            if (!(pre[i] > 0.0)) gv[i] = 0.0;
        LinearGrads hg = linear_backward(*hidden_, features_, g);
        g = std::move(hg.input);
        store(hg);
    }
    store(lg);
    Tensor4 t = unflatten(g, head_input_dims_);
    if (config_.use_ocn) t = maxpool2_backward(orient_input_dims_, orient_argmax_, t);
    for (std::size_t s = kNumStages; s-- > 0;) {
        const StageCache& c = cache_[s];
        t = relu_backward(c.pre_activation, maxpool2_backward(c.pool_input, c.pool_argmax, t));
        if (config_.use_ocn) {
            OcnGrads og = ocn_backward(ocn_[s], t);
            grads[s] = std::move(og.learned.weights);
            t = std::move(og.input);
        } else {
            ConvGrads cg = conv_backward(conv_[s], t);
            grads[s] = std::move(cg.weights);
            t = std::move(cg.input);
        }
    }
    return grads;
}

Network build_network(const NetworkConfig& nc, std::span<const LandmarkBank> banks, std::uint64_t seed) {
    Network net(nc, banks);
    std::mt19937_64 g(seed);
    for (const Parameter& p : net.parameters())
        if (!p.is_bias) fill_uniform(p.values, p.fan_in, g);
    return net;
}

Tensor4 image_batch(const data::ImageSet& images, std::span<const std::size_t> items) {
    const std::size_t px = images.pixels_per_image();
    Tensor4 t({items.size(), 1, images.rows, images.cols});
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (items[i] >= images.count) throw InvalidArgument("image_batch: index out of range");
        std::ranges::copy(images.image(items[i]), t.data() + i * px);
    }
    return t;
}

TrainResult train(Network& net, const data::LabeledImages& data, const TrainConfig& tc, const data::LabeledImages* test,
                  const std::optional<Rotation>& test_rotation, const std::function<void(const EpochRecord&)>& on_epoch) {
    tc.validate();
    data.validate();
    if (data.size() == 0) throw InvalidArgument("train: empty training set");
    const std::size_t n = data.size();
    std::mt19937_64 g(tc.seed);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    TrainResult result;

    for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
        const auto t0 = Clock::now();
        const double lr = learning_rate_at(tc, epoch);
        rng::shuffle(std::span(order), g);
        double loss_sum = 0.0;
        for (std::size_t first = 0, b = 0; first < n; first += tc.batch_size, ++b) {
            const std::span<const std::size_t> items(order.data() + first, std::min(tc.batch_size, n - first));
            std::vector<int> labels;
            for (std::size_t i : items) labels.push_back(data.labels[i]);
            const Matrix logits = net.forward(image_batch(data.images, items), true, g);
            const LossResult loss = softmax_cross_entropy(logits, labels);
            if (!std::isfinite(loss.loss))
                throw NumericalError("training diverged: loss " + fmt(loss.loss) + " at epoch " + std::to_string(epoch + 1) +
                                     ", batch " + std::to_string(b + 1) + ", lr " + fmt(lr));
            const auto grads = net.backward(loss.grad);
            auto params = net.parameters();
            for (std::size_t p = 0; p < params.size(); ++p) {
                const double decay = params[p].is_bias ? 0.0 : tc.weight_decay;
                auto w = params[p].values;
                for (std::size_t t = 0; t < w.size(); ++t) {
                    w[t] -= lr * (grads[p][t] + decay * w[t]);
                    if (!std::isfinite(w[t]))
                        throw NumericalError("training diverged: non-finite weight at epoch " + std::to_string(epoch + 1) +
                                             ", batch " + std::to_string(b + 1) + ", lr " + fmt(lr));
                }
            }
            result.loss_curve.push_back(loss.loss);
            loss_sum += loss.loss * static_cast<double>(items.size());
        }
        EpochRecord rec{epoch + 1, loss_sum / static_cast<double>(n), std::nullopt, lr, 0.0};
        if (test) rec.test_error = evaluate(net, *test, test_rotation).error_rate;
        rec.seconds = seconds_since(t0);
        result.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return result;
}

std::vector<int> predict(Network& net, const data::ImageSet& images) {
    std::vector<int> out;
    out.reserve(images.count);
    std::mt19937_64 unused(0);
    std::vector<std::size_t> items;
    for (std::size_t first = 0; first < images.count; first += kEvalBatch) {
        items.resize(std::min(kEvalBatch, images.count - first));
        std::iota(items.begin(), items.end(), first);
        const Matrix logits = net.forward(image_batch(images, items), false, unused);
        for (std::size_t r = 0; r < logits.rows(); ++r) {
            const auto row = logits.row(r);
            out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
        }
    }
    return out;
}

EvalReport evaluate(Network& net, const data::LabeledImages& data, const std::optional<Rotation>& rotation) {
    const auto t0 = Clock::now();
    data.validate();
    const std::vector<int> pred = rotation ? predict(net, data::rotate_dataset(data, rotation->angles_degrees, rotation->seed).images)
                                           : predict(net, data.images);
    std::array<std::size_t, data::kNumClasses> wrong{}, total{};
    std::size_t errors = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const auto c = static_cast<std::size_t>(data.labels[i]);
        ++total[c];
        if (pred[i] != data.labels[i]) {
            ++wrong[c];
            ++errors;
        }
    }
    EvalReport r;
    r.count = data.size();
    r.error_rate = r.count ? 100.0 * static_cast<double>(errors) / static_cast<double>(r.count) : 0.0;
    for (std::size_t c = 0; c < total.size(); ++c)
        r.per_class_errors[c] = total[c] ? 100.0 * static_cast<double>(wrong[c]) / static_cast<double>(total[c]) : 0.0;
    r.param_count = net.param_count();
    r.wall_time_s = seconds_since(t0);
    return r;
}

void save_checkpoint(const Network& net, const std::filesystem::path& path) {
    const NetworkConfig& nc = net.config();
    detail::ByteWriter w;
    w.magic("OCNM");
    w.u32(kCheckpointVersion);
    for (std::size_t width : nc.stage_widths) w.u32(static_cast<std::uint32_t>(width));
    w.u32(static_cast<std::uint32_t>(nc.kernel_size));
    w.u32(static_cast<std::uint32_t>(nc.n_orient));
    w.u32(static_cast<std::uint32_t>(nc.n_scale));
    w.u32(nc.use_ocn ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(nc.image_size));
    w.u32(static_cast<std::uint32_t>(nc.hidden_units));
    w.f64(nc.dropout);
    for (const OcnLayer& l : net.ocn_stages()) w.f64s(l.modulator.stack);
    for (auto p : net.parameters()) w.f64s(p);
    w.save(path);
}

Network load_checkpoint(const std::filesystem::path& path) {
    auto r = detail::ByteReader::load(path);
    r.expect_magic("OCNM");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) throw IoError(r.name() + ": unsupported checkpoint version " + std::to_string(version));
    NetworkConfig nc;
    for (auto& width : nc.stage_widths) width = r.u32();
    nc.kernel_size = r.u32();
    nc.n_orient = r.u32();
    nc.n_scale = r.u32();
    const std::uint32_t flag = r.u32();
    if (flag > 1) throw IoError(r.name() + ": corrupt architecture flag");
    nc.use_ocn = flag == 1;
    nc.image_size = r.u32();
    nc.hidden_units = r.u32();
    nc.dropout = r.f64();
    try {
        nc.validate();
    } catch (const InvalidArgument& e) {
        throw IoError(r.name() + ": corrupt config (" + e.what() + ")");
    }
    const std::size_t k = nc.kernel_size;
    std::vector<OcnLayer> ocn;
    std::vector<Conv2d> conv;
    if (nc.use_ocn) {
        std::vector<Modulator> mods;
        for (std::size_t s = 0; s < kNumStages; ++s)
            mods.push_back(Modulator{nc.n_orient, k, r.f64s(std::uint64_t{nc.n_orient} * k * k)});
        for (std::size_t s = 0; s < kNumStages; ++s) {
            LearnedFilter l(nc.stage_widths[s], stage_input_channels(nc, s), nc.n_orient, k);
            l.weights = r.f64s(l.weights.size());
            ocn.emplace_back(std::move(l), std::move(mods[s]));
        }
    } else {
        for (std::size_t s = 0; s < kNumStages; ++s) {
            Conv2d c(stage_input_channels(nc, s), nc.stage_widths[s], k);
            c.weights = r.f64s(c.weights.size());
            conv.push_back(std::move(c));
        }
    }
    auto read_linear = [&r](std::size_t in, std::size_t out) {
        Linear l(in, out);
        const auto w = r.f64s(l.weights.size());
        std::ranges::copy(w, l.weights.data());
        l.bias = r.f64s(l.bias.size());
        return l;
    };
    std::optional<Linear> hidden;
    if (nc.hidden_units > 0) hidden = read_linear(head_features(nc), nc.hidden_units);
    Linear head = read_linear(nc.hidden_units > 0 ? nc.hidden_units : head_features(nc), data::kNumClasses);
    if (!r.at_end()) throw IoError(r.name() + ": trailing bytes after checkpoint payload");
    return Network(nc, std::move(ocn), std::move(conv), std::move(hidden), std::move(head));
}

void write_epoch_csv(std::span<const EpochRecord> epochs, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "epoch,train_loss,test_error,lr,seconds\n";
    for (const EpochRecord& e : epochs)
        out << e.epoch << ',' << fmt(e.train_loss) << ',' << (e.test_error ? fmt(*e.test_error) : "") << ',' << fmt(e.lr)
            << ',' << fmt(e.seconds) << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

} // namespace lgf::nn
