#include "vssmseg/train.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

#include "vssmseg/loss.hpp"
#include "vssmseg/optim.hpp"
#include "vssmseg/serialize.hpp"

namespace vssmseg::train {

namespace {

Tensor<float> stack_images(const std::vector<data::SyntheticSample>& batch) {
    int64_t b = static_cast<int64_t>(batch.size());
    int64_t h = batch[0].image.dim(1), w = batch[0].image.dim(2);
    std::vector<float> buf(static_cast<size_t>(b * 3 * h * w));
    for (int64_t i = 0; i < b; ++i)
        std::copy(batch[static_cast<size_t>(i)].image.vec().begin(),
                  batch[static_cast<size_t>(i)].image.vec().end(), buf.begin() + i * 3 * h * w);
    return Tensor<float>(Shape{b, 3, h, w}, std::move(buf));
}

Tensor<float> stack_masks(const std::vector<data::SyntheticSample>& batch) {
    int64_t b = static_cast<int64_t>(batch.size());
    int64_t h = batch[0].mask.dim(1), w = batch[0].mask.dim(2);
    std::vector<float> buf(static_cast<size_t>(b * h * w));
    for (int64_t i = 0; i < b; ++i)
        std::copy(batch[static_cast<size_t>(i)].mask.vec().begin(),
                  batch[static_cast<size_t>(i)].mask.vec().end(), buf.begin() + i * h * w);
    return Tensor<float>(Shape{b, 1, h, w}, std::move(buf));
}

// Mean of per-head losses.
Tensor<float> head_loss(const std::vector<Tensor<float>>& heads, const Tensor<float>& target) {
    Tensor<float> acc;
    for (size_t i = 0; i < heads.size(); ++i) {
        Tensor<float> l = loss::bce_dice_loss(heads[i], target);
        acc = i == 0 ? l : ops::add(acc, l);
    }
    return ops::scale(acc, 1.0f / static_cast<float>(heads.size()));
}

Tensor<float> probs_of(const Tensor<float>& logits) {
    std::vector<float> p(logits.vec().size());
    for (size_t i = 0; i < p.size(); ++i) p[i] = ops::sigmoid_scalar(logits.vec()[i]);
    return Tensor<float>(logits.shape(), std::move(p));
}

}  // namespace

int worker_threads() {
    const char* env = std::getenv("VSSMSEG_THREADS");
    if (!env) return 1;
    int n = std::atoi(env);
    return n < 1 ? 1 : n;
}

EvalResult evaluate(const net::Model<float>& model, const data::Dataset& ds) {
    if (ds.empty()) throw ValueError("evaluate: empty dataset");
    struct PerSample {
        double loss = 0;
        metrics::ConfusionCounts counts;
    };
    std::vector<PerSample> results(ds.size());
    auto work = [&](size_t begin, size_t end) {
        for (size_t i = begin; i < end; ++i) {
            std::vector<data::SyntheticSample> one{ds[i]};
            Tensor<float> img = stack_images(one);
            Tensor<float> msk = stack_masks(one);
            auto heads = model.forward(img);
            results[i].loss = static_cast<double>(head_loss(heads, msk).item());
            results[i].counts = metrics::confusion(probs_of(heads[0]), msk);
        }
    };
    int workers = std::min<int>(worker_threads(), static_cast<int>(ds.size()));
    if (workers <= 1) {
        work(0, ds.size());
    } else {
        std::vector<std::thread> pool;
        size_t chunk = (ds.size() + static_cast<size_t>(workers) - 1) / static_cast<size_t>(workers);
        for (int t = 0; t < workers; ++t) {
            size_t b = static_cast<size_t>(t) * chunk;
            size_t e = std::min(ds.size(), b + chunk);
            if (b < e) pool.emplace_back(work, b, e);
        }
        for (auto& th : pool) th.join();
    }
    EvalResult out;
    metrics::ConfusionCounts total;
    for (const auto& r : results) {  // fixed index order
        out.loss += r.loss;
        total += r.counts;
    }
    out.loss /= static_cast<double>(ds.size());
    out.m = metrics::metrics_from(total);
    return out;
}

TrainResult run_training(const TrainConfig& tc, const ModelConfig& mc,
                         const data::Dataset& train_set, const data::Dataset& val_set,
                         const std::string& out_dir) {
    tc.validate();
    mc.validate();
    if (train_set.empty()) throw ValueError("run_training: empty training set");
    if (val_set.empty()) throw ValueError("run_training: empty validation set");
    std::filesystem::create_directories(out_dir);

    net::Model<float> model(mc, tc.seed);
    optim::AdamW<float> opt(tc.lr_init, tc.weight_decay);

    TrainResult result;
    result.metrics_path = out_dir + "/metrics.csv";
    result.checkpoint_path = out_dir + "/best.ckpt";
    std::ofstream csv(result.metrics_path);
    if (!csv) throw IoError("cannot write " + result.metrics_path);
    csv << "epoch,split,loss,miou,dsc,acc,sen,spe\n";
    char row[256];

    std::vector<size_t> order(train_set.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int64_t epoch = 0; epoch < tc.epochs; ++epoch) {
        double lr = optim::cosine_lr(epoch, tc.t_max, tc.lr_init, tc.lr_min);
        opt.set_lr(lr);

        Rng shuffle_rng(Rng::mix(tc.seed, 0xe70c00 + static_cast<uint64_t>(epoch)));
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<size_t>(shuffle_rng.uniform_int(static_cast<int64_t>(i)))]);
        Rng aug_rng(Rng::mix(tc.seed, 0xa060 + static_cast<uint64_t>(epoch)));

        double train_loss = 0;
        int64_t steps = 0;
        metrics::ConfusionCounts train_counts;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(tc.batch_size)) {
            size_t end = std::min(order.size(), start + static_cast<size_t>(tc.batch_size));
            std::vector<data::SyntheticSample> batch;
            batch.reserve(end - start);
            for (size_t i = start; i < end; ++i) {
                bool hf = tc.augment_flip_h && aug_rng.coin();
                bool vf = tc.augment_flip_v && aug_rng.coin();
                int k = tc.augment_rot90 ? static_cast<int>(aug_rng.uniform_int(4)) : 0;
                batch.push_back(data::augment_apply(train_set[order[i]], hf, vf, k));
            }
            Tensor<float> img = stack_images(batch);
            Tensor<float> msk = stack_masks(batch);

            Tape<float> tape;
            model.bind(&tape);
            auto heads = model.forward(img);
            Tensor<float> l = head_loss(heads, msk);
            float lv = l.item();
            if (!std::isfinite(lv))
                throw NumericError("run_training: non-finite loss at epoch " +
                                   std::to_string(epoch) + " step " + std::to_string(steps));
            tape.backward(l);
            opt.step(model.params(), tape);
            model.bind(nullptr);

            train_loss += static_cast<double>(lv);
            train_counts += metrics::confusion(probs_of(heads[0]), msk);
            ++steps;
        }
        train_loss /= static_cast<double>(steps);
        metrics::Metrics tm = metrics::metrics_from(train_counts);
        std::snprintf(row, sizeof(row), "%lld,train,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                      static_cast<long long>(epoch), train_loss, tm.miou, tm.dsc, tm.acc, tm.sen,
                      tm.spe);
        csv << row;

        EvalResult ev = evaluate(model, val_set);
        std::snprintf(row, sizeof(row), "%lld,val,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                      static_cast<long long>(epoch), ev.loss, ev.m.miou, ev.m.dsc, ev.m.acc,
                      ev.m.sen, ev.m.spe);
        csv << row;
        csv.flush();

        if (ev.m.dsc > result.best_val_dsc) {
            result.best_val_dsc = ev.m.dsc;
            result.best_epoch = epoch;
            io::save_checkpoint(result.checkpoint_path, model.named_params());
        }
    }
    return result;
}

}  // namespace vssmseg::train
