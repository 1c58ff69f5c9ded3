#pragma once

#include "msmbd/cmrca.hpp"
#include "msmbd/encoders.hpp"
#include "msmbd/params.hpp"
#include "msmbd/record.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

namespace msmbd {

enum class FusionMode { cmrca, concat_fc };

std::string_view to_string(FusionMode mode);
FusionMode parse_fusion_mode(std::string_view text);

struct ModelConfig {
    CmrcaConfig cmrca;
    std::size_t user_dim = 32;   // d_u, width of the user-feature encoder
    std::size_t n_tweets = 8;    // N
    std::size_t tweet_dim = 16;  // d_l
    std::size_t visual_dim = 16; // d_v
    FusionMode fusion = FusionMode::cmrca;
    bool positional_encoding = false;
    EmbeddingSource source = EmbeddingSource::precomputed;
    std::uint64_t seed = 0;
    Timestamp reference_time = 0;

    /// Throws ValidationError naming the offending field.
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

std::string model_config_json(const ModelConfig& cfg);
ModelConfig parse_model_config_json(std::string_view text);

struct Prediction {
    double p = 0.5;
    double logit = 0.0;
    Label label_hat = Label::bot;
};

/// Ties (p == 0.5) go to bot.
Label threshold_label(double p);

/// A full detector: parameters plus the layer handles bound to them.
/// Copies are deep.
class Model {
public:
    static Model create(const ModelConfig& cfg);

    Model(const Model& other);
    Model& operator=(const Model& other);
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;

    const ModelConfig& config() const { return cfg_; }
    ParamRegistry& params() { return params_; }
    const ParamRegistry& params() const { return params_; }

    /// Fused [2d] representation; in concat_fc mode the three aligned
    /// vectors are concatenated and mapped to 2d by one linear layer.
    Var fuse(const ModalityEmbeddings& inputs) const;
    /// Classifier logit, differentiable w.r.t. params().
    Var logit(const ModalityEmbeddings& inputs) const;
    /// Gradient-free prediction.
    Prediction predict(const ModalityEmbeddings& inputs) const;

    VisualAdapter visual_adapter(const std::filesystem::path& root) const;
    TweetSource tweet_source(const std::filesystem::path& root) const;
    ModalityEmbeddings embed(const UserRecord& record, const std::filesystem::path& root) const;

private:
    explicit Model(const ModelConfig& cfg);

    ModelConfig cfg_;
    ParamRegistry params_;
    LinearLayer user_encoder_;
    SsefLayer ssef_;
    CmrcaParams cmrca_;
    LinearLayer concat_fc_;
    LinearLayer classifier_;
};

/// -(y ln p + (1-y) ln(1-p)) with p clamped to [1e-12, 1 - 1e-12].
double bce_loss(double p, int label);

// Checkpoint container:
//   magic "MSMC", version u16 LE (= 1), header length u32 LE,
//   JSON header {config, tensors: [{name, shape}]},
//   then one float64 tensor block per parameter in name order.
inline constexpr std::uint16_t kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const std::filesystem::path& path);
void write_checkpoint(std::ostream& out, const Model& model);
/// Throws CheckpointError on any version, config or shape mismatch.
Model load_checkpoint(const std::filesystem::path& path);
/// Also requires the stored config to equal `expected`.
Model load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);
Model read_checkpoint(std::istream& in, const std::string& context);

} // namespace msmbd
