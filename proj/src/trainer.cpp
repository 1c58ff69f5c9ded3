#include "msmbd/trainer.hpp"

#include "msmbd/error.hpp"
#include "msmbd/rng.hpp"

#include <json.hpp>

#include <cmath>
#include <sstream>
#include <thread>

namespace msmbd {

using json = nlohmann::json;

std::string_view to_string(OptimizerKind kind)
{
    return kind == OptimizerKind::sgd ? "sgd" : "adam";
}

OptimizerKind parse_optimizer(std::string_view text)
{
    if (text == "sgd") {
        return OptimizerKind::sgd;
    }
    if (text == "adam") {
        return OptimizerKind::adam;
    }
    throw ValidationError("optimizer: expected sgd or adam, got '" + std::string(text) + "'");
}

void TrainConfig::validate() const
{
    if (epochs == 0) {
        throw ValidationError("epochs must be positive");
    }
    if (batch_size == 0) {
        throw ValidationError("batch_size must be positive");
    }
    if (!std::isfinite(learning_rate) || learning_rate < 0.0) {
        throw ValidationError("learning_rate must be finite and non-negative");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0)) {
        throw ValidationError("beta1 must lie in [0, 1)");
    }
    if (!(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ValidationError("beta2 must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) {
        throw ValidationError("adam_eps must be positive");
    }
}

Metrics Metrics::from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn)
{
    auto ratio = [](double num, double den) { return den == 0.0 ? 0.0 : num / den; };
    Metrics m;
    m.tp = tp;
    m.fp = fp;
    m.tn = tn;
    m.fn = fn;
    const double dtp = static_cast<double>(tp);
    m.accuracy = ratio(dtp + static_cast<double>(tn), static_cast<double>(m.total()));
    m.precision = ratio(dtp, dtp + static_cast<double>(fp));
    m.recall = ratio(dtp, dtp + static_cast<double>(fn));
    m.f1 = ratio(2.0 * m.precision * m.recall, m.precision + m.recall);
    return m;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

Optimizer::Optimizer(const TrainConfig& cfg) : cfg_(cfg)
{
    cfg_.validate();
}

void Optimizer::step(ParamRegistry& params, double grad_scale)
{
    ++t_;
    const double lr = cfg_.learning_rate;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& [name, var] : params) {
        const Tensor g = var.grad();
        Tensor& w = var.mutable_value();
        if (cfg_.optimizer == OptimizerKind::sgd) {
            for (std::size_t i = 0; i < w.size(); ++i) {
                w[i] -= lr * (grad_scale * g[i]);
            }
            continue;
        }
        auto [mit, m_new] = m_.try_emplace(name, Tensor(w.shape()));
        auto [vit, v_new] = v_.try_emplace(name, Tensor(w.shape()));
        Tensor& m = mit->second;
        Tensor& v = vit->second;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = grad_scale * g[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
            w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.adam_eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Data preparation
// ---------------------------------------------------------------------------

std::vector<Example> build_examples(const Model& model, const Dataset& dataset, Split split, bool require_labels)
{
    std::vector<Example> out;
    for (std::size_t i : dataset.indices(split)) {
        const UserRecord& r = dataset.records[i];
        Example ex;
        ex.id = r.id;
        if (r.label) {
            ex.label = *r.label == Label::bot ? 1 : 0;
        } else if (require_labels) {
            throw ValidationError("record '" + r.id + "' in " + std::string(to_string(split)) + " split has no label");
        }
        ex.inputs = model.embed(r, dataset.root);
        out.push_back(std::move(ex));
    }
    return out;
}

std::string epoch_log_csv(const std::vector<EpochRecord>& log)
{
    std::ostringstream out;
    out.precision(17);
    out << "epoch,train_loss,val_accuracy,val_f1\n";
    for (const EpochRecord& e : log) {
        out << e.epoch << ',' << e.train_loss << ',' << e.val_accuracy << ',' << e.val_f1 << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

TrainResult train(const std::vector<Example>& train_set, const std::vector<Example>& val_set, const TrainConfig& cfg,
                  Model model, const EpochCallback& on_epoch)
{
    cfg.validate();
    if (train_set.empty()) {
        throw ValidationError("train split is empty");
    }
    if (val_set.empty()) {
        throw ValidationError("val split is empty");
    }
    for (const Example& ex : train_set) {
        if (ex.label < 0) {
            throw ValidationError("train record '" + ex.id + "' has no label");
        }
    }

    Optimizer opt(cfg);
    TrainResult result{model, 0, {}};
    double best_f1 = -1.0;
    double best_loss = 0.0;
    std::size_t stale = 0;
    std::vector<std::size_t> order(train_set.size());

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) {
            order[i] = i;
        }
        Pcg32 rng(mix_seed(cfg.seed, epoch));
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.below(static_cast<std::uint32_t>(i))]);
        }

        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            model.params().zero_grad();
            for (std::size_t k = start; k < end; ++k) {
                const Example& ex = train_set[order[k]];
                const Var loss = bce_with_logits(model.logit(ex.inputs), static_cast<double>(ex.label));
                const double value = loss.value()[0];
                if (!std::isfinite(value)) {
                    throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " on record '" + ex.id +
                                       "'");
                }
                loss_sum += value;
                backward(loss);
            }
            opt.step(model.params(), 1.0 / static_cast<double>(end - start));
        }
        model.params().zero_grad();

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(train_set.size());
        const Metrics val = evaluate(model, val_set);
        rec.val_accuracy = val.accuracy;
        rec.val_f1 = val.f1;
        result.log.push_back(rec);
        if (on_epoch) {
            on_epoch(rec);
        }

        if (rec.val_f1 > best_f1 || (rec.val_f1 == best_f1 && rec.train_loss < best_loss)) {
            const bool f1_improved = rec.val_f1 > best_f1;
            best_f1 = rec.val_f1;
            best_loss = rec.train_loss;
            result.best = model;
            result.best_epoch = epoch;
            if (f1_improved) {
                stale = 0;
            } else {
                ++stale;
            }
        } else {
            ++stale;
        }
        if (cfg.patience > 0 && stale >= cfg.patience) {
            break;
        }
    }
    return result;
}

TrainResult train(const Dataset& dataset, const TrainConfig& cfg, Model model, const EpochCallback& on_epoch)
{
    const std::vector<Example> train_set = build_examples(model, dataset, Split::train);
    const std::vector<Example> val_set = build_examples(model, dataset, Split::val);
    return train(train_set, val_set, cfg, std::move(model), on_epoch);
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

std::vector<Prediction> predict_all(const Model& model, const std::vector<Example>& examples, std::size_t threads)
{
    std::vector<Prediction> out(examples.size());
    const std::size_t workers = std::max<std::size_t>(1, std::min(threads, examples.size()));
    if (workers == 1) {
        for (std::size_t i = 0; i < examples.size(); ++i) {
            out[i] = model.predict(examples[i].inputs);
        }
        return out;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < examples.size(); i += workers) {
                    out[i] = model.predict(examples[i].inputs);
                }
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (std::thread& t : pool) {
        t.join();
    }
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
    return out;
}

Metrics evaluate(const Model& model, const std::vector<Example>& examples, std::size_t threads)
{
    if (examples.empty()) {
        throw ValidationError("cannot evaluate an empty split");
    }
    for (const Example& ex : examples) {
        if (ex.label < 0) {
            throw ValidationError("record '" + ex.id + "' has no label");
        }
    }
    const std::vector<Prediction> preds = predict_all(model, examples, threads);
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const bool predicted_bot = preds[i].label_hat == Label::bot;
        const bool is_bot = examples[i].label == 1;
        tp += predicted_bot && is_bot;
        fp += predicted_bot && !is_bot;
        tn += !predicted_bot && !is_bot;
        fn += !predicted_bot && is_bot;
    }
    return Metrics::from_counts(tp, fp, tn, fn);
}

Metrics evaluate(const Model& model, const Dataset& dataset, Split split, std::size_t threads)
{
    return evaluate(model, build_examples(model, dataset, split), threads);
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

AblationReport run_ablation(const Dataset& dataset, const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                            const std::vector<std::uint64_t>& seeds)
{
    if (seeds.empty()) {
        throw ValidationError("ablation needs at least one seed");
    }
    AblationReport report;
    for (std::uint64_t seed : seeds) {
        AblationRun run;
        run.seed = seed;
        for (FusionMode mode : {FusionMode::cmrca, FusionMode::concat_fc}) {
            ModelConfig mc = model_cfg;
            mc.fusion = mode;
            mc.seed = seed;
            TrainConfig tc = train_cfg;
            tc.seed = seed;
            const TrainResult trained = train(dataset, tc, Model::create(mc));
            const Metrics m = evaluate(trained.best, dataset, Split::test);
            (mode == FusionMode::cmrca ? run.cmrca : run.concat_fc) = m;
        }
        report.runs.push_back(run);
    }
    const double n = static_cast<double>(report.runs.size());
    for (const AblationRun& r : report.runs) {
        report.mean_cmrca_f1 += r.cmrca.f1 / n;
        report.mean_concat_fc_f1 += r.concat_fc.f1 / n;
        report.mean_cmrca_accuracy += r.cmrca.accuracy / n;
        report.mean_concat_fc_accuracy += r.concat_fc.accuracy / n;
    }
    return report;
}

namespace {

json metrics_to_json(const Metrics& m)
{
    return json{{"tp", m.tp},
                {"fp", m.fp},
                {"tn", m.tn},
                {"fn", m.fn},
                {"accuracy", m.accuracy},
                {"precision", m.precision},
                {"recall", m.recall},
                {"f1", m.f1}};
}

} // namespace

std::string metrics_json(const Metrics& m)
{
    return metrics_to_json(m).dump();
}

std::string ablation_json(const AblationReport& report)
{
    json runs = json::array();
    for (const AblationRun& r : report.runs) {
        runs.push_back({{"seed", r.seed},
                        {"cmrca", metrics_to_json(r.cmrca)},
                        {"concat_fc", metrics_to_json(r.concat_fc)},
                        {"delta_f1", r.cmrca.f1 - r.concat_fc.f1},
                        {"delta_accuracy", r.cmrca.accuracy - r.concat_fc.accuracy}});
    }
    return json{{"runs", runs},
                {"mean",
                 {{"cmrca_f1", report.mean_cmrca_f1},
                  {"concat_fc_f1", report.mean_concat_fc_f1},
                  {"cmrca_accuracy", report.mean_cmrca_accuracy},
                  {"concat_fc_accuracy", report.mean_concat_fc_accuracy},
                  {"delta_f1", report.delta_f1()},
                  {"delta_accuracy", report.delta_accuracy()}}}}
        .dump();
}

} // namespace msmbd
