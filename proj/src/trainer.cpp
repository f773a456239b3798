#include "fusionnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <mutex>
#include <thread>

#include "fusionnet/checkpoint.hpp"
#include "fusionnet/errors.hpp"

namespace fusionnet {

namespace fs = std::filesystem;

namespace {

// Purposes for RunConfig::stream_seed.
constexpr std::uint64_t kSplitStream = 1;
constexpr std::uint64_t kAugmentStream = 2;
constexpr std::uint64_t kInitStream = 3;
constexpr std::uint64_t kBatchStream = 4;
constexpr std::uint64_t kDropoutStream = 5;

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) {
        throw_error(ErrorKind::io, "cannot write " + path.string());
    }
}

std::string base_id(const std::string& id) {
    const auto pos = id.find("#aug");
    return pos == std::string::npos ? id : id.substr(0, pos);
}

PreparedData prepare(const RunConfig& config, const fs::path& root, bool augment_train) {
    DatasetManifest manifest = load_dataset(root);
    std::vector<int> labels;
    for (ImageSample& s : manifest.samples) {
        if (config.crop > 0) {
            s.pixels = center_crop(s.pixels, config.crop, config.crop);
        }
        if (s.pixels.dim(1) != config.input_size || s.pixels.dim(2) != config.input_size) {
            s.pixels = bicubic_resize(s.pixels, config.input_size, config.input_size);
        }
        labels.push_back(s.label);
    }
    SplitConfig split_cfg = config.split;
    split_cfg.seed = config.stream_seed(kSplitStream);
    manifest.split = stratified_split(labels, split_cfg);

    PreparedData data;
    std::vector<ImageSample> train;
    std::unordered_set<std::string> held_out;
    for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
        ImageSample& s = manifest.samples[i];
        switch (manifest.split[i]) {
            case Split::train: train.push_back(std::move(s)); break;
            case Split::val:
                held_out.insert(s.id);
                data.val.push_back(std::move(s));
                break;
            case Split::test:
                held_out.insert(s.id);
                data.test.push_back(std::move(s));
                break;
        }
    }
    data.originals = {train.size(), data.val.size(), data.test.size()};

    // Statistics see training originals only, before any augmentation.
    std::vector<const Image*> stat_images;
    for (const ImageSample& s : train) {
        if (held_out.count(s.id) != 0) {
            throw_error(ErrorKind::data, "sample " + s.id + " is in both the training and a held-out split");
        }
        stat_images.push_back(&s.pixels);
        data.stats_ids.push_back(s.id);
    }
    data.stats = config.normalization == NormalizationMode::dataset ? compute_dataset_stats(stat_images)
                                                                   : constant_stats(config.constant_mean);
    data.stats_before_augment = true;

    if (augment_train) {
        AugmentConfig aug = config.augment;
        aug.seed = config.stream_seed(kAugmentStream);
        data.train = augment_expand(train, aug);
    } else {
        data.train = std::move(train);
    }
    for (const ImageSample& s : data.train) {
        if (held_out.count(base_id(s.id)) != 0) {
            throw_error(ErrorKind::data, "held-out sample " + s.id + " reached the training set");
        }
    }
    for (auto* set : {&data.train, &data.val, &data.test}) {
        for (ImageSample& s : *set) {
            s.pixels = normalize(s.pixels, data.stats);
        }
    }
    return data;
}

template <class Real>
struct Batch {
    Tensor<Real> images;
    std::vector<int> labels;
};

template <class Real>
Batch<Real> gather(const std::vector<ImageSample>& samples, std::span<const std::size_t> indices) {
    const Shape& shape = samples.at(indices[0]).pixels.shape();
    const std::size_t per = shape_size(shape);
    Batch<Real> batch{Tensor<Real>({indices.size(), shape[0], shape[1], shape[2]}), {}};
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const ImageSample& s = samples[indices[b]];
        std::copy(s.pixels.data(), s.pixels.data() + per, batch.images.data() + b * per);
        batch.labels.push_back(s.label);
    }
    return batch;
}

/// Bounded single-producer queue; the consumer sees batches in plan order.
template <class Real>
class BatchQueue {
public:
    BatchQueue(const std::vector<ImageSample>& samples, std::vector<std::vector<std::size_t>> plan,
               bool threaded, std::size_t capacity = 4)
        : samples_(samples), plan_(std::move(plan)), capacity_(capacity) {
        if (threaded) {
            worker_ = std::jthread([this](std::stop_token stop) { produce(stop); });
        }
    }
    ~BatchQueue() {
        if (worker_.joinable()) {
            worker_.request_stop();
            { std::lock_guard lock(mutex_); }
            cv_.notify_all();
        }
    }

    std::size_t size() const { return plan_.size(); }

    Batch<Real> next() {
        if (!worker_.joinable()) {
            return gather<Real>(samples_, plan_.at(consumed_++));
        }
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [this] { return !ready_.empty() || failure_; });
        if (ready_.empty() && failure_) {
            std::rethrow_exception(failure_);
        }
        Batch<Real> batch = std::move(ready_.front());
        ready_.pop_front();
        ++consumed_;
        cv_.notify_all();
        return batch;
    }

private:
    void produce(std::stop_token stop) {
        try {
            for (const auto& indices : plan_) {
                Batch<Real> batch = gather<Real>(samples_, indices);
                std::unique_lock lock(mutex_);
                cv_.wait(lock, [&] { return ready_.size() < capacity_ || stop.stop_requested(); });
                if (stop.stop_requested()) {
                    return;
                }
                ready_.push_back(std::move(batch));
                cv_.notify_all();
            }
        } catch (...) {
            std::lock_guard lock(mutex_);
            failure_ = std::current_exception();
            cv_.notify_all();
        }
    }

    const std::vector<ImageSample>& samples_;
    std::vector<std::vector<std::size_t>> plan_;
    std::size_t capacity_;
    std::size_t consumed_ = 0;
    std::mutex mutex_;
    std::condition_variable cv_;
    std::deque<Batch<Real>> ready_;
    std::exception_ptr failure_;
    std::jthread worker_;
};

template <class Real>
void tally(const Tensor<Real>& logits, std::span<const int> labels, std::vector<int>& predicted,
           std::vector<int>& truth) {
    const std::size_t classes = logits.dim(1);
    for (std::size_t b = 0; b < logits.dim(0); ++b) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < classes; ++k) {
            if (logits[b * classes + k] > logits[b * classes + best]) {
                best = k;
            }
        }
        predicted.push_back(static_cast<int>(best));
        truth.push_back(labels[b]);
    }
}

template <class Real>
MetricsReport evaluate(const Network<Real>& net, const std::vector<ImageSample>& samples, std::size_t batch_size) {
    if (samples.empty()) {
        throw_error(ErrorKind::data, "cannot evaluate an empty split");
    }
    std::vector<int> predicted;
    std::vector<int> truth;
    double loss_sum = 0.0;
    Rng unused(0);
    std::vector<std::size_t> indices;
    for (std::size_t start = 0; start < samples.size(); start += batch_size) {
        indices.clear();
        for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) {
            indices.push_back(i);
        }
        const Batch<Real> batch = gather<Real>(samples, indices);
        const ForwardPass<Real> pass = net.forward(batch.images, Mode::eval, unused);
        const auto sce = softmax_cross_entropy(pass.logits, std::span<const int>(batch.labels));
        loss_sum += sce.loss * static_cast<double>(indices.size());
        tally(pass.logits, batch.labels, predicted, truth);
    }
    const double loss = loss_sum / static_cast<double>(samples.size());
    if (!std::isfinite(loss)) {
        throw_error(ErrorKind::numeric, "non-finite evaluation loss");
    }
    return make_report(confusion(predicted, truth), loss);
}

struct BestState {
    std::int64_t epoch = -1;
    std::uint64_t accuracy = 0;  // hundredths of a percent
    double loss = 0.0;
};

bool improves(const MetricsReport& r, const BestState& best) {
    const std::uint64_t acc = percent_hundredths(r.cm.tp + r.cm.tn, r.cm.total());
    return best.epoch < 0 || acc > best.accuracy || (acc == best.accuracy && r.loss < best.loss);
}

template <class Real>
TrainResult train_impl(const RunConfig& config, const TrainOptions& options) {
    const std::string config_text = to_text(config);
    std::error_code ec;
    fs::create_directories(options.out, ec);
    if (ec) {
        throw_error(ErrorKind::io, "cannot create output directory " + options.out.string() + ": " + ec.message());
    }

    std::optional<Checkpoint<Real>> resumed;
    if (options.resume) {
        resumed = load_checkpoint<Real>(*options.resume);
        if (resumed->config_text != config_text) {
            throw_error(ErrorKind::config, "checkpoint " + options.resume->string() +
                                               " was written with a different configuration");
        }
    }

    const PreparedData data = prepare(config, options.data, true);
    write_text(options.out / "config.txt", config_text);
    write_stats(options.out / "stats.txt", data.stats);

    Network<Real> net = init_params<Real>(config.network_spec(), config.stream_seed(kInitStream));
    Optimizer<Real> optimizer(config.optimizer);
    Rng dropout_rng = Rng::derive(config.stream_seed(kDropoutStream), 0);

    std::string log = std::string(kCsvHeader) + "\n";
    BestState best;
    std::vector<NamedTensor<Real>> best_params;
    std::size_t start_epoch = 1;
    MetricsReport best_val;

    auto emit = [&](const std::string& row) {
        log += row + "\n";
        if (options.progress != nullptr) {
            *options.progress << row << '\n' << std::flush;
        }
    };
    auto checkpoint = [&](std::size_t epoch) {
        Checkpoint<Real> ckpt;
        ckpt.config_text = config_text;
        ckpt.epoch = epoch;
        ckpt.params = snapshot(net);
        ckpt.optimizer_kind = config.optimizer.kind;
        ckpt.optimizer = optimizer.state();
        ckpt.rng_state = dropout_rng.state();
        ckpt.log_text = log;
        ckpt.best_epoch = best.epoch;
        ckpt.best_val_hundredths = best.accuracy;
        ckpt.best_val_loss = best.loss;
        ckpt.best_params = best_params;
        return ckpt;
    };
    auto consider_best = [&](std::size_t epoch, const MetricsReport& val) {
        if (!improves(val, best)) {
            return false;
        }
        best.epoch = static_cast<std::int64_t>(epoch);
        best.accuracy = percent_hundredths(val.cm.tp + val.cm.tn, val.cm.total());
        best.loss = val.loss;
        best_params = snapshot(net);
        best_val = val;
        return true;
    };

    if (resumed) {
        restore(net, resumed->params);
        if (resumed->optimizer_kind != config.optimizer.kind) {
            throw_error(ErrorKind::config, "checkpoint optimizer does not match the configuration");
        }
        optimizer.state() = resumed->optimizer;
        dropout_rng.set_state(resumed->rng_state);
        log = resumed->log_text;
        best = {resumed->best_epoch, resumed->best_val_hundredths, resumed->best_val_loss};
        best_params = resumed->best_params;
        start_epoch = static_cast<std::size_t>(resumed->epoch) + 1;
        // Recompute the best row so the result carries its metrics.
        Network<Real> best_net = net;
        restore(best_net, best_params);
        best_val = evaluate(best_net, data.val, config.batch_size);
    } else {
        const MetricsReport val = evaluate(net, data.val, config.batch_size);
        emit(csv_row(0, "val", val));
        consider_best(0, val);
        const Checkpoint<Real> ckpt = checkpoint(0);
        save_checkpoint(options.out / "best.ckpt", ckpt);
        save_checkpoint(options.out / "last.ckpt", ckpt);
    }

    TrainResult result;
    result.finished = true;
    result.epochs_run = start_epoch - 1;
    for (std::size_t epoch = start_epoch; epoch <= config.epochs; ++epoch) {
        BatchQueue<Real> queue(data.train, batches(data.train.size(), config.batch_size,
                                                   config.stream_seed(kBatchStream), epoch),
                               !options.single_thread);
        std::vector<int> predicted;
        std::vector<int> truth;
        double loss_sum = 0.0;
        for (std::size_t b = 0; b < queue.size(); ++b) {
            const Batch<Real> batch = queue.next();
            net.zero_grad();
            ForwardPass<Real> pass = net.forward(batch.images, Mode::train, dropout_rng);
            const double loss = net.backward(pass, batch.labels);
            if (!std::isfinite(loss)) {
                throw_error(ErrorKind::numeric, "non-finite training loss at epoch " + std::to_string(epoch));
            }
            optimizer.step(net.parameters());
            loss_sum += loss * static_cast<double>(batch.labels.size());
            tally(pass.logits, batch.labels, predicted, truth);
        }
        emit(csv_row(static_cast<long>(epoch), "train",
                     make_report(confusion(predicted, truth), loss_sum / static_cast<double>(truth.size()))));
        const MetricsReport val = evaluate(net, data.val, config.batch_size);
        emit(csv_row(static_cast<long>(epoch), "val", val));
        const bool improved = consider_best(epoch, val);
        const Checkpoint<Real> ckpt = checkpoint(epoch);
        if (improved) {
            save_checkpoint(options.out / "best.ckpt", ckpt);
        }
        save_checkpoint(options.out / "last.ckpt", ckpt);
        write_text(options.out / "log.csv", log);
        result.epochs_run = epoch;
        if (options.stop_after && epoch >= *options.stop_after && epoch < config.epochs) {
            result.finished = false;
            break;
        }
    }

    result.best_epoch = best.epoch;
    result.best_val = best_val;
    if (result.finished) {
        restore(net, best_params);
        result.test = evaluate(net, data.test, config.batch_size);
        emit(csv_row(best.epoch, "test", result.test));
    }
    write_text(options.out / "log.csv", log);
    result.log = log;
    return result;
}

template <class Real>
EvalResult eval_impl(const fs::path& checkpoint, const fs::path& root, Split split, const RunConfig* expected) {
    const Checkpoint<Real> ckpt = load_checkpoint<Real>(checkpoint);
    const RunConfig config = parse_config(ckpt.config_text);
    config.validate();
    if (expected != nullptr) {
        if (expected->architecture != config.architecture ||
            propagate_shapes(expected->network_spec()).tap_lengths !=
                propagate_shapes(config.network_spec()).tap_lengths ||
            expected->input_size != config.input_size) {
            throw_error(ErrorKind::config, "checkpoint architecture does not match the given configuration");
        }
    }
    Network<Real> net(config.network_spec());
    restore(net, ckpt.params);
    const PreparedData data = prepare(config, root, false);
    const std::vector<ImageSample>& samples =
        split == Split::train ? data.train : (split == Split::val ? data.val : data.test);
    EvalResult out;
    out.report = evaluate(net, samples, config.batch_size);
    out.row = csv_row(static_cast<long>(ckpt.epoch), std::string(to_string(split)), out.report);
    return out;
}

}  // namespace

PreparedData prepare_data(const RunConfig& config, const fs::path& root) {
    config.validate();
    return prepare(config, root, true);
}

TrainResult cmd_train(const RunConfig& config, const TrainOptions& options) {
    config.validate();
    if (!fs::is_directory(options.data)) {
        throw_error(ErrorKind::data, "data directory '" + options.data.string() + "' does not exist");
    }
    return config.element_width == 64 ? train_impl<double>(config, options) : train_impl<float>(config, options);
}

EvalResult cmd_eval(const fs::path& checkpoint, const fs::path& data, Split split, const RunConfig* expected) {
    const int width = checkpoint_element_width(checkpoint);
    return width == 64 ? eval_impl<double>(checkpoint, data, split, expected)
                       : eval_impl<float>(checkpoint, data, split, expected);
}

}  // namespace fusionnet
