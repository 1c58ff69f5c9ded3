#include "cli.hpp"

#include "msmbd/error.hpp"
#include "msmbd/gradcheck.hpp"
#include "msmbd/model.hpp"
#include "msmbd/rng.hpp"
#include "msmbd/synthetic.hpp"
#include "msmbd/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <ostream>
#include <sstream>

namespace msmbd::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Option groups; each subcommand exposes the union of a few of them.
enum Group : unsigned {
    kCommon = 1u << 0,
    kSynth = 1u << 1,
    kModel = 1u << 2,
    kTrain = 1u << 3,
    kData = 1u << 4,
    kCheckpoint = 1u << 5,
    kSplit = 1u << 6,
    kAblate = 1u << 7,
    kGrad = 1u << 8,
};

struct KeySpec {
    const char* key;
    const char* fallback;
    const char* help;
    unsigned groups;
    bool flag = false;
};

const std::vector<KeySpec>& key_specs()
{
    static const std::vector<KeySpec> specs{
        {"seed", "1", "seed for every random generator", kCommon},
        {"threads", "1", "worker threads for evaluation", kCommon},
        {"out", "", "directory receiving every file output", kCommon},
        {"n_users", "512", "synthetic users", kSynth},
        {"n_tweets", "8", "tweet slots per user (N)", kSynth | kModel},
        {"tweet_dim", "16", "tweet embedding width", kSynth | kModel},
        {"visual_dim", "16", "visual embedding width", kSynth | kModel},
        {"cross_modal_strength", "1.0", "probability the planted cross-modal rule holds", kSynth},
        {"bot_fraction", "0.5", "share of bot accounts", kSynth},
        {"dim", "64", "aligned width d", kModel},
        {"tokens", "8", "tokens per modality T", kModel},
        {"heads", "4", "attention heads M", kModel},
        {"user_dim", "32", "user feature encoder width", kModel},
        {"fusion", "cmrca", "cmrca or concat_fc", kModel},
        {"positional_encoding", "false", "sinusoidal positions in the tweet encoder", kModel, true},
        {"source", "precomputed", "embedding source: precomputed or stub", kModel},
        {"reference_time", "2022-03-01T00:00:00Z", "instant account ages are measured at", kModel},
        {"epochs", "50", "training epochs", kTrain},
        {"batch_size", "16", "mini-batch size", kTrain},
        {"learning_rate", "0.001", "step size", kTrain},
        {"optimizer", "adam", "sgd or adam", kTrain},
        {"patience", "0", "early-stop patience on val F1 (0 disables)", kTrain},
        {"data", "", "dataset directory (users.jsonl + splits.json)", kData},
        {"checkpoint", "", "model checkpoint file", kCheckpoint},
        {"split", "test", "train, val, test or all", kSplit},
        {"ablation_seeds", "1,2,3", "comma-separated seeds", kAblate},
        {"gradcheck_eps", "0.001", "finite-difference step", kGrad},
        {"gradcheck_tolerance", "0.0001", "max relative error accepted", kGrad},
    };
    return specs;
}

const KeySpec* find_key(const std::string& key)
{
    for (const KeySpec& s : key_specs()) {
        if (key == s.key) {
            return &s;
        }
    }
    return nullptr;
}

std::string dashed(std::string key)
{
    std::replace(key.begin(), key.end(), '_', '-');
    return key;
}

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

/// key = value lines; '#' starts a comment; [section] headers are allowed
/// for grouping and otherwise ignored.
std::map<std::string, std::string> read_config_file(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("config: cannot open " + path.string());
    }
    std::map<std::string, std::string> out;
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        const auto hash = line.find('#');
        line = trim(hash == std::string::npos ? line : line.substr(0, hash));
        if (line.empty() || (line.front() == '[' && line.back() == ']')) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ValidationError("config line " + std::to_string(n) + ": expected key = value");
        }
        std::string key = trim(line.substr(0, eq));
        std::replace(key.begin(), key.end(), '-', '_');
        std::string value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
            value = value.substr(1, value.size() - 2);
        }
        if (!find_key(key)) {
            throw ValidationError("config line " + std::to_string(n) + ": unknown key '" + key + "'");
        }
        out[key] = value;
    }
    return out;
}

/// Resolved settings: defaults, then the config file, then flags.
class Settings {
public:
    explicit Settings(std::map<std::string, std::string> values) : values_(std::move(values)) {}

    const std::string& str(const std::string& key) const { return values_.at(key); }

    std::uint64_t u64(const std::string& key) const
    {
        const std::string& v = str(key);
        try {
            std::size_t used = 0;
            if (v.empty() || v.front() == '-') {
                throw std::invalid_argument(v);
            }
            const unsigned long long x = std::stoull(v, &used);
            if (used != v.size()) {
                throw std::invalid_argument(v);
            }
            return x;
        } catch (const std::logic_error&) {
            throw ValidationError(key + ": expected a non-negative integer, got '" + v + "'");
        }
    }

    std::size_t size(const std::string& key) const { return static_cast<std::size_t>(u64(key)); }

    double real(const std::string& key) const
    {
        const std::string& v = str(key);
        try {
            std::size_t used = 0;
            const double x = std::stod(v, &used);
            if (used != v.size() || !std::isfinite(x)) {
                throw std::invalid_argument(v);
            }
            return x;
        } catch (const std::logic_error&) {
            throw ValidationError(key + ": expected a finite number, got '" + v + "'");
        }
    }

    bool boolean(const std::string& key) const
    {
        const std::string& v = str(key);
        if (v == "true" || v == "1" || v == "yes" || v == "on") {
            return true;
        }
        if (v == "false" || v == "0" || v == "no" || v == "off") {
            return false;
        }
        throw ValidationError(key + ": expected true or false, got '" + v + "'");
    }

    template <typename F>
    auto parsed(const std::string& key, F&& parse) const
    {
        try {
            return parse(str(key));
        } catch (const Error& e) {
            throw ValidationError(key + ": " + e.what());
        }
    }

    fs::path required_path(const std::string& key) const
    {
        if (str(key).empty()) {
            throw ValidationError(key + ": required");
        }
        return str(key);
    }

    std::string dump() const
    {
        std::ostringstream out;
        for (const auto& [k, v] : values_) {
            out << k << " = " << v << '\n';
        }
        return out.str();
    }

private:
    std::map<std::string, std::string> values_;
};

SynthSpec synth_spec(const Settings& s)
{
    SynthSpec spec;
    spec.seed = s.u64("seed");
    spec.n_users = s.size("n_users");
    spec.n_tweets = s.size("n_tweets");
    spec.tweet_dim = s.size("tweet_dim");
    spec.visual_dim = s.size("visual_dim");
    spec.cross_modal_strength = s.real("cross_modal_strength");
    spec.bot_fraction = s.real("bot_fraction");
    spec.validate();
    return spec;
}

ModelConfig model_config(const Settings& s)
{
    ModelConfig c;
    c.cmrca.dim = s.size("dim");
    c.cmrca.tokens = s.size("tokens");
    c.cmrca.heads = s.size("heads");
    c.user_dim = s.size("user_dim");
    c.n_tweets = s.size("n_tweets");
    c.tweet_dim = s.size("tweet_dim");
    c.visual_dim = s.size("visual_dim");
    c.fusion = s.parsed("fusion", parse_fusion_mode);
    c.positional_encoding = s.boolean("positional_encoding");
    c.source = s.parsed("source", parse_embedding_source);
    c.seed = s.u64("seed");
    c.reference_time = s.parsed("reference_time", parse_timestamp);
    c.validate();
    return c;
}

TrainConfig train_config(const Settings& s)
{
    TrainConfig c;
    c.seed = s.u64("seed");
    c.epochs = s.size("epochs");
    c.batch_size = s.size("batch_size");
    c.learning_rate = s.real("learning_rate");
    c.optimizer = s.parsed("optimizer", parse_optimizer);
    c.patience = s.size("patience");
    c.validate();
    return c;
}

std::size_t thread_count(const Settings& s)
{
    const std::size_t n = s.size("threads");
    if (n == 0) {
        throw ValidationError("threads: must be positive");
    }
    return n;
}

Dataset open_dataset(const Settings& s)
{
    const fs::path dir = s.required_path("data");
    for (const char* name : {kCorpusFile, kSplitFile}) {
        if (!fs::is_regular_file(dir / name)) {
            throw ValidationError("data: missing " + (dir / name).string());
        }
    }
    return load_dataset(dir);
}

Model open_checkpoint(const Settings& s)
{
    const fs::path path = s.required_path("checkpoint");
    if (!fs::is_regular_file(path)) {
        throw ValidationError("checkpoint: missing file " + path.string());
    }
    return load_checkpoint(path);
}

fs::path output_dir(const Settings& s)
{
    const fs::path dir = s.required_path("out");
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) {
        throw Error("cannot write " + path.string());
    }
}

std::vector<std::size_t> split_indices(const Dataset& ds, const std::string& split, bool everything)
{
    if (split == "all") {
        if (everything) {
            std::vector<std::size_t> all(ds.records.size());
            std::iota(all.begin(), all.end(), 0);
            return all;
        }
        std::vector<std::size_t> out;
        for (Split sp : {Split::train, Split::val, Split::test}) {
            const auto part = ds.indices(sp);
            out.insert(out.end(), part.begin(), part.end());
        }
        return out;
    }
    for (Split sp : {Split::train, Split::val, Split::test}) {
        if (split == to_string(sp)) {
            return ds.indices(sp);
        }
    }
    throw ValidationError("split: expected train, val, test or all, got '" + split + "'");
}

std::vector<Example> examples_for(const Model& m, const Dataset& ds, const std::vector<std::size_t>& idx,
                                  bool require_labels)
{
    std::vector<Example> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) {
        const UserRecord& r = ds.records[i];
        Example ex;
        ex.id = r.id;
        ex.label = r.label ? (*r.label == Label::bot ? 1 : 0) : -1;
        if (require_labels && ex.label < 0) {
            throw ValidationError("record '" + r.id + "' has no label");
        }
        ex.inputs = m.embed(r, ds.root);
        out.push_back(std::move(ex));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_synth(const Settings& s, std::ostream& out, std::ostream& err)
{
    const SynthSpec spec = synth_spec(s);
    const fs::path dir = output_dir(s);
    write_synthetic(dir, spec, generate_synthetic(spec));
    err << "wrote " << spec.n_users << " synthetic users to " << dir.string() << '\n';
    out << json{{"out", dir.string()}, {"n_users", spec.n_users}, {"seed", spec.seed}}.dump() << '\n';
    return 0;
}

int cmd_train(const Settings& s, std::ostream& out, std::ostream& err)
{
    const ModelConfig mc = model_config(s);
    const TrainConfig tc = train_config(s);
    const Dataset ds = open_dataset(s);
    const fs::path dir = output_dir(s);

    const TrainResult r = train(ds, tc, Model::create(mc), [&](const EpochRecord& e) {
        err << "epoch " << e.epoch << " loss " << e.train_loss << " val_acc " << e.val_accuracy << " val_f1 "
            << e.val_f1 << '\n';
    });
    save_checkpoint(r.best, dir / "model.ckpt");
    write_text(dir / "train_log.csv", epoch_log_csv(r.log));
    write_text(dir / "run_config.txt", s.dump());

    const EpochRecord& best = r.log[r.best_epoch - 1];
    out << json{{"checkpoint", (dir / "model.ckpt").string()},
                {"best_epoch", r.best_epoch},
                {"epochs_run", r.log.size()},
                {"val_accuracy", best.val_accuracy},
                {"val_f1", best.val_f1}}
               .dump()
        << '\n';
    return 0;
}

int cmd_eval(const Settings& s, std::ostream& out, std::ostream&)
{
    const Model m = open_checkpoint(s);
    const Dataset ds = open_dataset(s);
    const std::size_t threads = thread_count(s);
    const auto idx = split_indices(ds, s.str("split"), false);
    out << metrics_json(evaluate(m, examples_for(m, ds, idx, true), threads)) << '\n';
    return 0;
}

int cmd_predict(const Settings& s, std::ostream& out, std::ostream&)
{
    const Model m = open_checkpoint(s);
    const Dataset ds = open_dataset(s);
    const std::size_t threads = thread_count(s);
    const auto examples = examples_for(m, ds, split_indices(ds, s.str("split"), true), false);
    const std::vector<Prediction> preds = predict_all(m, examples, threads);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        out << json{{"id", examples[i].id}, {"p", preds[i].p}, {"label", std::string(to_string(preds[i].label_hat))}}
                   .dump()
            << '\n';
    }
    return 0;
}

std::vector<std::uint64_t> seed_list(const Settings& s)
{
    std::vector<std::uint64_t> seeds;
    std::stringstream in(s.str("ablation_seeds"));
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        try {
            std::size_t used = 0;
            if (item.empty() || item.front() == '-') {
                throw std::invalid_argument(item);
            }
            seeds.push_back(std::stoull(item, &used));
            if (used != item.size()) {
                throw std::invalid_argument(item);
            }
        } catch (const std::logic_error&) {
            throw ValidationError("ablation_seeds: bad seed '" + item + "'");
        }
    }
    if (seeds.empty()) {
        throw ValidationError("ablation_seeds: at least one seed required");
    }
    return seeds;
}

int cmd_ablate(const Settings& s, std::ostream& out, std::ostream& err)
{
    const ModelConfig mc = model_config(s);
    const TrainConfig tc = train_config(s);
    const auto seeds = seed_list(s);
    const Dataset ds = open_dataset(s);
    const AblationReport report = run_ablation(ds, mc, tc, seeds);
    const std::string text = ablation_json(report);
    if (!s.str("out").empty()) {
        write_text(output_dir(s) / "ablation.json", text + "\n");
    }
    err << "mean test F1: cmrca " << report.mean_cmrca_f1 << ", concat_fc " << report.mean_concat_fc_f1
        << ", delta " << report.delta_f1() << '\n';
    out << text << '\n';
    return 0;
}

int cmd_gradcheck(const Settings& s, std::ostream& out, std::ostream& err)
{
    const ModelConfig mc = model_config(s);
    const double eps = s.real("gradcheck_eps");
    const double tolerance = s.real("gradcheck_tolerance");
    Model m = Model::create(mc);

    ModalityEmbeddings inputs;
    double label = 1.0;
    std::string sample = "random";
    if (!s.str("data").empty()) {
        const Dataset ds = open_dataset(s);
        const auto idx = ds.indices(Split::train);
        if (idx.empty()) {
            throw ValidationError("data: train split is empty");
        }
        const UserRecord& r = ds.records[idx.front()];
        inputs = m.embed(r, ds.root);
        label = r.label && *r.label == Label::bot ? 1.0 : 0.0;
        sample = r.id;
    } else {
        // one random account with a padded last slot (when N > 1)
        Pcg32 rng(mix_seed(mc.seed, fnv1a64("gradcheck")));
        inputs.visual = Tensor({mc.visual_dim});
        for (double& v : inputs.visual.data()) {
            v = rng.uniform(-1.0, 1.0);
        }
        inputs.user = Tensor({kUserFeatureCount});
        for (double& v : inputs.user.data()) {
            v = rng.uniform(0.0, 3.0);
        }
        const std::size_t valid = std::max<std::size_t>(1, mc.n_tweets - 1);
        inputs.tweets.rows = Tensor({mc.n_tweets, mc.tweet_dim});
        inputs.tweets.valid.assign(mc.n_tweets, false);
        for (std::size_t i = 0; i < valid; ++i) {
            inputs.tweets.valid[i] = true;
            for (std::size_t c = 0; c < mc.tweet_dim; ++c) {
                inputs.tweets.rows.at(i, c) = rng.uniform(-1.0, 1.0);
            }
        }
    }

    const auto start = std::chrono::steady_clock::now();
    auto loss = [&] { return bce_with_logits(m.logit(inputs), label); };
    GradReport report;
    try {
        report = grad_check(loss, m.params(), {.eps = eps, .stencil = 4});
    } catch (const ValidationError& e) {
        throw ValidationError(std::string("gradcheck_eps: ") + e.what());
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    json params = json::array();
    for (const ParamGradReport& p : report.params) {
        params.push_back({{"name", p.name},
                          {"checked", p.checked},
                          {"max_abs_error", p.max_abs_error},
                          {"max_rel_error", p.max_rel_error},
                          {"worst", {{"index", p.worst.index}, {"analytic", p.worst.analytic}, {"numeric", p.worst.numeric}}}});
    }
    const bool pass = report.max_rel_error < tolerance;
    const json doc{{"sample", sample},
                   {"eps", report.eps},
                   {"stencil", 4},
                   {"checked", report.checked},
                   {"max_abs_error", report.max_abs_error},
                   {"max_rel_error", report.max_rel_error},
                   {"tolerance", tolerance},
                   {"pass", pass},
                   {"seconds", seconds},
                   {"params", params}};
    if (!s.str("out").empty()) {
        write_text(output_dir(s) / "gradcheck.json", doc.dump(2) + "\n");
    }
    err << "checked " << report.checked << " scalars, max relative error " << report.max_rel_error
        << (pass ? " (pass)" : " (FAIL)") << '\n';
    out << doc.dump() << '\n';
    return pass ? 0 : 2;
}

struct Command {
    const char* name;
    const char* help;
    unsigned groups;
    int (*fn)(const Settings&, std::ostream&, std::ostream&);
};

const std::vector<Command>& commands()
{
    static const std::vector<Command> list{
        {"synth", "generate a synthetic dataset under --out", kCommon | kSynth, cmd_synth},
        {"train", "train a model; writes model.ckpt and train_log.csv under --out",
         kCommon | kModel | kTrain | kData, cmd_train},
        {"eval", "score a checkpoint on a labeled split; metrics JSON to stdout",
         kCommon | kData | kCheckpoint | kSplit, cmd_eval},
        {"predict", "JSON Lines of {id, p, label} to stdout", kCommon | kData | kCheckpoint | kSplit, cmd_predict},
        {"ablate", "train cmrca and concat_fc fusion with identical seeds and compare",
         kCommon | kModel | kTrain | kData | kAblate, cmd_ablate},
        {"gradcheck", "finite-difference check of every model gradient",
         kCommon | kModel | kData | kGrad, cmd_gradcheck},
    };
    return list;
}

} // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Multimodal social bot detector"};
    app.name("msmbd");
    app.require_subcommand(1);

    std::string config_path;
    std::map<std::string, std::string> flag_values;
    std::map<std::string, bool> flag_bools;
    std::map<std::string, CLI::Option*> flag_options;
    std::map<CLI::App*, const Command*> by_app;
    std::map<std::pair<CLI::App*, std::string>, CLI::Option*> options;

    for (const Command& cmd : commands()) {
        CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
        by_app[sub] = &cmd;
        sub->add_option("--config", config_path, "key = value settings file (flags take precedence)");
        for (const KeySpec& k : key_specs()) {
            if ((k.groups & cmd.groups) == 0) {
                continue;
            }
            const std::string flag = "--" + dashed(k.key);
            const std::string help = std::string(k.help) + " [" + k.fallback + "]";
            CLI::Option* opt = k.flag ? sub->add_flag(flag, flag_bools[k.key], help)
                                      : sub->add_option(flag, flag_values[k.key], help);
            options[{sub, k.key}] = opt;
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    CLI::App* chosen = app.get_subcommands().front();
    const Command& cmd = *by_app.at(chosen);
    try {
        std::map<std::string, std::string> values;
        for (const KeySpec& k : key_specs()) {
            values[k.key] = k.fallback;
        }
        if (!config_path.empty()) {
            for (auto& [k, v] : read_config_file(config_path)) {
                values[k] = v;
            }
        }
        for (const auto& [where, opt] : options) {
            if (where.first == chosen && opt->count() > 0) {
                const std::string& key = where.second;
                values[key] = find_key(key)->flag ? (flag_bools[key] ? "true" : "false") : flag_values[key];
            }
        }
        return cmd.fn(Settings(std::move(values)), out, err);
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const ParseError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
}

} // namespace msmbd::cli
