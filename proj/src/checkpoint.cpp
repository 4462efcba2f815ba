#include "xpcb/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "xpcb/errors.hpp"

namespace xpcb {

namespace {

constexpr char kMagic[8] = {'X', 'P', 'C', 'B', 'C', 'K', 'P', '1'};

template <class U>
void put(std::string& out, U value) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <class U>
    U get() {
        need(sizeof(U));
        U value = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i)
            value |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += sizeof(U);
        return value;
    }
    std::string take(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (n > bytes_.size() - pos_) throw ArtifactMismatch("checkpoint is truncated");
    }
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

template <class Params>
void store_params(Checkpoint& ckpt, const Params& params) {
    params.visit([&](const std::string& name, const Tensor<float>& t) { ckpt.add(name, t); });
}

template <class Params, class Visit>
void load_params(const Checkpoint& ckpt, Params& params, Visit visit) {
    visit(params, [&](const std::string& name, Tensor<float>& t) {
        const Tensor<float>& src = ckpt.get(name);
        if (src.shape != t.shape)
            throw ArtifactMismatch("tensor " + name + " has shape " + shape_string(src.shape) + ", expected " +
                                   shape_string(t.shape));
        t.data = src.data;
    });
}

std::size_t header_size(const Checkpoint& ckpt, const char* section, const char* key) {
    try {
        return ckpt.header.at(section).at(key).get<std::size_t>();
    } catch (const nlohmann::json::exception&) {
        throw ArtifactMismatch(std::string("checkpoint header lacks ") + section + "." + key);
    }
}

}  // namespace

void Checkpoint::add(const std::string& name, const Tensor<float>& tensor) {
    if (contains(name)) throw InputError("duplicate checkpoint tensor " + name);
    tensors_.emplace_back(name, tensor);
}

bool Checkpoint::contains(const std::string& name) const {
    return std::any_of(tensors_.begin(), tensors_.end(), [&](const auto& e) { return e.first == name; });
}

const Tensor<float>& Checkpoint::get(const std::string& name) const {
    for (const auto& [n, t] : tensors_)
        if (n == name) return t;
    throw ArtifactMismatch("checkpoint has no tensor " + name);
}

std::string Checkpoint::serialize() const {
    std::string out(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    const std::string h = header.dump();
    put<std::uint64_t>(out, h.size());
    out += h;
    put<std::uint64_t>(out, tensors_.size());
    for (const auto& [name, t] : tensors_) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
        for (std::size_t d : t.shape) put<std::uint64_t>(out, d);
        for (float v : t.data) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    }
    return out;
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
    if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
        throw ArtifactMismatch("not a checkpoint file (bad magic)");
    Reader r(bytes);
    r.take(sizeof kMagic);
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) throw ArtifactMismatch("unsupported checkpoint version " + std::to_string(version));
    Checkpoint ckpt;
    try {
        ckpt.header = nlohmann::ordered_json::parse(r.take(r.get<std::uint64_t>()));
    } catch (const nlohmann::json::parse_error& e) {
        throw ArtifactMismatch(std::string("corrupt checkpoint header: ") + e.what());
    }
    const auto count = r.get<std::uint64_t>();
    for (std::uint64_t k = 0; k < count; ++k) {
        const std::string name = r.take(r.get<std::uint32_t>());
        std::vector<std::size_t> shape(r.get<std::uint32_t>());
        for (auto& d : shape) d = r.get<std::uint64_t>();
        Tensor<float> t;
        t.shape = shape;
        t.data.resize(Tensor<float>::element_count(shape));
        for (float& v : t.data) v = std::bit_cast<float>(r.get<std::uint32_t>());
        ckpt.add(name, t);
    }
    if (!r.done()) throw ArtifactMismatch("trailing bytes after checkpoint tensors");
    return ckpt;
}

void Checkpoint::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write checkpoint " + path.string());
    const std::string bytes = serialize();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArtifactMismatch("checkpoint not found: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize(ss.str());
}

nlohmann::ordered_json encoder_config_to_json(const EncoderConfig& c) {
    return {{"vocab_size", c.vocab_size},       {"d_model", c.d_model},
            {"n_layers", c.n_layers},           {"n_heads", c.n_heads},
            {"d_ff", c.d_ff},                   {"max_positions", c.max_positions},
            {"dropout_rate", c.dropout_rate},   {"pooling", std::string(pooling_name(c.pooling))}};
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
    try {
        EncoderConfig c;
        c.vocab_size = j.at("vocab_size").get<std::size_t>();
        c.d_model = j.at("d_model").get<std::size_t>();
        c.n_layers = j.at("n_layers").get<std::size_t>();
        c.n_heads = j.at("n_heads").get<std::size_t>();
        c.d_ff = j.at("d_ff").get<std::size_t>();
        c.max_positions = j.at("max_positions").get<std::size_t>();
        c.dropout_rate = j.at("dropout_rate").get<double>();
        c.pooling = parse_pooling(j.at("pooling").get<std::string>());
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ArtifactMismatch(std::string("bad encoder config in checkpoint: ") + e.what());
    }
}

void store_encoder(Checkpoint& ckpt, const EncoderParams<float>& params) {
    ckpt.header["encoder"] = encoder_config_to_json(params.config);
    store_params(ckpt, params);
}

EncoderParams<float> load_encoder(const Checkpoint& ckpt, const EncoderConfig* expected) {
    if (!ckpt.header.contains("encoder")) throw ArtifactMismatch("checkpoint holds no encoder");
    const EncoderConfig cfg = encoder_config_from_json(ckpt.header["encoder"]);
    if (expected && !(cfg == *expected))
        throw ArtifactMismatch("checkpoint encoder config does not match the run configuration");
    EncoderParams<float> params = init_encoder<float>(cfg, 0);
    load_params(ckpt, params, [](auto& p, auto&& f) { p.visit(f); });
    return params;
}

void store_classifier(Checkpoint& ckpt, const ClassifierParams<float>& params) {
    ckpt.header["classifier"] = {{"input_dim", params.input_dim()}, {"hidden", params.hidden()},
                                 {"momentum", params.momentum}};
    params.visit_state([&](const std::string& name, const Tensor<float>& t) { ckpt.add(name, t); });
}

ClassifierParams<float> load_classifier(const Checkpoint& ckpt) {
    ClassifierParams<float> params = init_classifier<float>(header_size(ckpt, "classifier", "input_dim"),
                                                            header_size(ckpt, "classifier", "hidden"), 0);
    params.momentum = ckpt.header["classifier"].value("momentum", kBatchNormMomentum);
    load_params(ckpt, params, [](auto& p, auto&& f) { p.visit_state(f); });
    return params;
}

void store_discriminator(Checkpoint& ckpt, const DiscriminatorParams<float>& params) {
    ckpt.header["discriminator"] = {{"input_dim", params.input_dim()}, {"hidden", params.hidden()}};
    store_params(ckpt, params);
}

DiscriminatorParams<float> load_discriminator(const Checkpoint& ckpt) {
    DiscriminatorParams<float> params = init_discriminator<float>(header_size(ckpt, "discriminator", "input_dim"),
                                                                  header_size(ckpt, "discriminator", "hidden"), 0);
    load_params(ckpt, params, [](auto& p, auto&& f) { p.visit(f); });
    return params;
}

}  // namespace xpcb
