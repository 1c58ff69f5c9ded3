#include "msmbd/model.hpp"

#include "msmbd/embedding_io.hpp"
#include "msmbd/error.hpp"
#include "msmbd/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace msmbd {

using json = nlohmann::json;

std::string_view to_string(FusionMode mode)
{
    return mode == FusionMode::cmrca ? "cmrca" : "concat_fc";
}

FusionMode parse_fusion_mode(std::string_view text)
{
    if (text == "cmrca") {
        return FusionMode::cmrca;
    }
    if (text == "concat_fc") {
        return FusionMode::concat_fc;
    }
    throw ValidationError("fusion: expected cmrca or concat_fc, got '" + std::string(text) + "'");
}

void ModelConfig::validate() const
{
    cmrca.validate();
    auto positive = [](std::size_t v, const char* field) {
        if (v == 0) {
            throw ValidationError(std::string(field) + " must be positive");
        }
    };
    positive(user_dim, "user_dim");
    positive(n_tweets, "n_tweets");
    positive(tweet_dim, "tweet_dim");
    positive(visual_dim, "visual_dim");
    if (tweet_dim % kSsefHeads != 0) {
        throw ValidationError("tweet_dim must be divisible by " + std::to_string(kSsefHeads));
    }
}

namespace {

json config_to_json(const ModelConfig& c)
{
    return json{{"dim", c.cmrca.dim},
                {"tokens", c.cmrca.tokens},
                {"heads", c.cmrca.heads},
                {"user_dim", c.user_dim},
                {"n_tweets", c.n_tweets},
                {"tweet_dim", c.tweet_dim},
                {"visual_dim", c.visual_dim},
                {"fusion", std::string(to_string(c.fusion))},
                {"positional_encoding", c.positional_encoding},
                {"source", std::string(to_string(c.source))},
                {"seed", c.seed},
                {"reference_time", c.reference_time}};
}

ModelConfig config_from_json(const json& j)
{
    static const std::array<std::string_view, 12> keys{"dim",       "tokens",     "heads",  "user_dim",
                                                       "n_tweets",  "tweet_dim",  "visual_dim", "fusion",
                                                       "positional_encoding", "source", "seed", "reference_time"};
    if (!j.is_object()) {
        throw ValidationError("model config must be a JSON object");
    }
    for (const auto& [k, v] : j.items()) {
        if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
            throw ValidationError("model config: unknown key '" + k + "'");
        }
    }
    ModelConfig c;
    try {
        c.cmrca.dim = j.at("dim").get<std::size_t>();
        c.cmrca.tokens = j.at("tokens").get<std::size_t>();
        c.cmrca.heads = j.at("heads").get<std::size_t>();
        c.user_dim = j.at("user_dim").get<std::size_t>();
        c.n_tweets = j.at("n_tweets").get<std::size_t>();
        c.tweet_dim = j.at("tweet_dim").get<std::size_t>();
        c.visual_dim = j.at("visual_dim").get<std::size_t>();
        c.fusion = parse_fusion_mode(j.at("fusion").get<std::string>());
        c.positional_encoding = j.at("positional_encoding").get<bool>();
        c.source = parse_embedding_source(j.at("source").get<std::string>());
        c.seed = j.at("seed").get<std::uint64_t>();
        c.reference_time = j.at("reference_time").get<Timestamp>();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

} // namespace

std::string model_config_json(const ModelConfig& cfg)
{
    return config_to_json(cfg).dump();
}

ModelConfig parse_model_config_json(std::string_view text)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("model config: ") + e.what());
    }
    return config_from_json(j);
}

Label threshold_label(double p)
{
    return p >= 0.5 ? Label::bot : Label::human;
}

Model::Model(const ModelConfig& cfg) : cfg_(cfg)
{
    cfg_.validate();
    const std::uint64_t s = cfg_.seed;
    user_encoder_ = LinearLayer::create(params_, "user_encoder", kUserFeatureCount, cfg_.user_dim, s);
    ssef_ = SsefLayer::create(params_, "ssef", cfg_.n_tweets, cfg_.tweet_dim, s, cfg_.positional_encoding);
    const std::size_t d = cfg_.cmrca.dim;
    if (cfg_.fusion == FusionMode::cmrca) {
        cmrca_ = CmrcaParams::create(params_, cfg_.cmrca, cfg_.user_dim, cfg_.visual_dim, cfg_.tweet_dim, s);
    } else {
        // Same alignment layers (and names) as the cmrca mode so the two
        // variants differ only in the fusion step.
        cmrca_.align_user = LinearLayer::create(params_, "cmrca.align_user", cfg_.user_dim, d, s);
        cmrca_.align_visual = LinearLayer::create(params_, "cmrca.align_visual", cfg_.visual_dim, d, s);
        cmrca_.align_tweets = LinearLayer::create(params_, "cmrca.align_tweets", cfg_.tweet_dim, d, s);
        concat_fc_ = LinearLayer::create(params_, "concat_fc", 3 * d, 2 * d, s);
    }
    classifier_ = LinearLayer::create(params_, "classifier", 2 * d, 1, s);
}

Model Model::create(const ModelConfig& cfg)
{
    return Model(cfg);
}

Model::Model(const Model& other) : Model(other.cfg_)
{
    params_.assign_values(other.params_);
}

Model& Model::operator=(const Model& other)
{
    if (this != &other) {
        *this = Model(other);
    }
    return *this;
}

Var Model::fuse(const ModalityEmbeddings& in) const
{
    if (in.visual.size() != cfg_.visual_dim) {
        throw DimensionError("visual embedding has " + std::to_string(in.visual.size()) + " entries, expected " +
                             std::to_string(cfg_.visual_dim));
    }
    if (in.tweets.rows.shape() != Shape{cfg_.n_tweets, cfg_.tweet_dim}) {
        throw DimensionError("tweet matrix " + shape_str(in.tweets.rows.shape()) + ", expected [" +
                             std::to_string(cfg_.n_tweets) + "x" + std::to_string(cfg_.tweet_dim) + "]");
    }
    const Var user = encode_user_features(Var(in.user), user_encoder_);
    const Var tweets = reshape(ssef_fuse(Var(in.tweets.rows), in.tweets.valid, ssef_), {cfg_.tweet_dim});
    const Var visual(in.visual.reshaped({cfg_.visual_dim}));
    if (cfg_.fusion == FusionMode::cmrca) {
        return cmrca_forward(visual, user, tweets, cmrca_, cfg_.cmrca);
    }
    const Var joined = concat({cmrca_.align_user(user), cmrca_.align_visual(visual), cmrca_.align_tweets(tweets)});
    return concat_fc_(joined);
}

Var Model::logit(const ModalityEmbeddings& inputs) const
{
    return classifier_(fuse(inputs));
}

Prediction Model::predict(const ModalityEmbeddings& inputs) const
{
    NoGradGuard guard;
    Prediction out;
    out.logit = logit(inputs).value()[0];
    out.p = sigmoid(out.logit);
    out.label_hat = threshold_label(out.p);
    return out;
}

VisualAdapter Model::visual_adapter(const std::filesystem::path& root) const
{
    return {cfg_.source, cfg_.visual_dim, mix_seed(cfg_.seed, fnv1a64("visual")), root};
}

TweetSource Model::tweet_source(const std::filesystem::path& root) const
{
    return {cfg_.source, cfg_.n_tweets, cfg_.tweet_dim, mix_seed(cfg_.seed, fnv1a64("tweets")), root};
}

ModalityEmbeddings Model::embed(const UserRecord& record, const std::filesystem::path& root) const
{
    return gather_embeddings(record, visual_adapter(root), tweet_source(root), cfg_.reference_time);
}

double bce_loss(double p, int label)
{
    if (label != 0 && label != 1) {
        throw ValidationError("bce_loss: label must be 0 or 1");
    }
    const double q = std::clamp(p, 1e-12, 1.0 - 1e-12);
    return label == 1 ? -std::log(q) : -std::log1p(-q);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'M', 'S', 'M', 'C'};

template <typename T>
void put_le(std::ostream& out, T v)
{
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
    }
}

template <typename T>
T get_le(std::istream& in, const std::string& context, const char* field)
{
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        const int c = in.get();
        if (c == std::char_traits<char>::eof()) {
            throw CheckpointError(context + ": truncated " + field);
        }
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return static_cast<T>(v);
}

} // namespace

void write_checkpoint(std::ostream& out, const Model& model)
{
    json tensors = json::array();
    for (const auto& [name, var] : model.params()) {
        tensors.push_back({{"name", name}, {"shape", var.shape()}});
    }
    const std::string header = json{{"config", config_to_json(model.config())}, {"tensors", tensors}}.dump();
    out.write(kCheckpointMagic, 4);
    put_le<std::uint16_t>(out, kCheckpointVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& [name, var] : model.params()) {
        write_tensor_block(out, var.value(), TensorDtype::float64);
    }
}

void save_checkpoint(const Model& model, const std::filesystem::path& path)
{
    std::ostringstream buf(std::ios::binary);
    write_checkpoint(buf, model);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot open " + path.string() + " for writing");
    }
    const std::string bytes = buf.str();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw Error("write failed: " + path.string());
    }
}

Model read_checkpoint(std::istream& in, const std::string& context)
{
    char magic[4] = {};
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
        throw CheckpointError(context + ": bad magic");
    }
    const auto version = get_le<std::uint16_t>(in, context, "version");
    if (version != kCheckpointVersion) {
        throw CheckpointError(context + ": unsupported version " + std::to_string(version));
    }
    const auto length = get_le<std::uint32_t>(in, context, "header length");
    std::string header(length, '\0');
    in.read(header.data(), length);
    if (static_cast<std::uint32_t>(in.gcount()) != length) {
        throw CheckpointError(context + ": truncated header");
    }

    json j;
    ModelConfig cfg;
    try {
        j = json::parse(header);
        cfg = config_from_json(j.at("config"));
    } catch (const CheckpointError&) {
        throw;
    } catch (const std::exception& e) {
        throw CheckpointError(context + ": bad header: " + e.what());
    }

    Model model = Model::create(cfg);
    const json& tensors = j.at("tensors");
    if (!tensors.is_array() || tensors.size() != model.params().size()) {
        throw CheckpointError(context + ": tensor count does not match config");
    }
    std::size_t i = 0;
    for (auto& [name, var] : model.params()) {
        const json& entry = tensors[i++];
        Shape shape;
        try {
            if (entry.at("name").get<std::string>() != name) {
                throw CheckpointError(context + ": expected tensor '" + name + "', found '" +
                                      entry.at("name").get<std::string>() + "'");
            }
            shape = entry.at("shape").get<Shape>();
        } catch (const json::exception& e) {
            throw CheckpointError(context + ": bad tensor entry: " + e.what());
        }
        if (shape != var.shape()) {
            throw CheckpointError(context + ": tensor '" + name + "' has shape " + shape_str(shape) +
                                  ", config implies " + shape_str(var.shape()));
        }
        Tensor t;
        try {
            t = read_tensor_block(in, TensorDtype::float64, context + " [" + name + "]");
        } catch (const FormatError& e) {
            throw CheckpointError(e.what());
        }
        if (t.size() != var.value().size()) {
            throw CheckpointError(context + ": tensor '" + name + "' payload size mismatch");
        }
        var.mutable_value() = t.reshaped(shape);
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw CheckpointError(context + ": trailing bytes");
    }
    return model;
}

Model load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CheckpointError("cannot open checkpoint " + path.string());
    }
    return read_checkpoint(in, path.string());
}

Model load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected)
{
    Model m = load_checkpoint(path);
    if (!(m.config() == expected)) {
        throw CheckpointError(path.string() + ": stored config " + model_config_json(m.config()) +
                              " does not match expected " + model_config_json(expected));
    }
    return m;
}

} // namespace msmbd
