#pragma once

// Binary parameter container.
//
//   "XPCBCKP1" | u32 version | u64 header length | header JSON
//   u64 tensor count | per tensor: u32 name length, name, u32 rank,
//   u64 dims[rank], float32 data (row-major)
//
// All integers and floats are little-endian. Saving then loading reproduces
// every tensor bit-for-bit.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "xpcb/encoder.hpp"
#include "xpcb/heads.hpp"

namespace xpcb {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class Checkpoint {
public:
    nlohmann::ordered_json header = nlohmann::ordered_json::object();

    // Throws InputError on a duplicate name.
    void add(const std::string& name, const Tensor<float>& tensor);
    bool contains(const std::string& name) const;
    // Throws ArtifactMismatch when absent.
    const Tensor<float>& get(const std::string& name) const;
    const std::vector<std::pair<std::string, Tensor<float>>>& tensors() const { return tensors_; }

    std::string serialize() const;
    // Throws ArtifactMismatch on a corrupt or foreign file.
    static Checkpoint deserialize(const std::string& bytes);

    void save(const std::filesystem::path& path) const;
    // Throws ArtifactMismatch when the file is missing or unreadable.
    static Checkpoint load(const std::filesystem::path& path);

private:
    std::vector<std::pair<std::string, Tensor<float>>> tensors_;
};

nlohmann::ordered_json encoder_config_to_json(const EncoderConfig& cfg);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

// Header key "encoder" holds the config; tensors use the params' prefix.
void store_encoder(Checkpoint& ckpt, const EncoderParams<float>& params);
// Throws ArtifactMismatch on a missing tensor, a shape mismatch, or a config
// different from `expected`.
EncoderParams<float> load_encoder(const Checkpoint& ckpt, const EncoderConfig* expected = nullptr);

// Classifier tensors include the batch-norm running statistics.
void store_classifier(Checkpoint& ckpt, const ClassifierParams<float>& params);
ClassifierParams<float> load_classifier(const Checkpoint& ckpt);
void store_discriminator(Checkpoint& ckpt, const DiscriminatorParams<float>& params);
DiscriminatorParams<float> load_discriminator(const Checkpoint& ckpt);

}  // namespace xpcb
