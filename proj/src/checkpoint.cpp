#include "tsvpr/checkpoint.hpp"

#include <map>

#include "tsvpr/binary_io.hpp"

namespace tsvpr {

namespace {

constexpr char kMagic[4] = {'S', 'V', 'W', 'T'};

void write_config(BinaryWriter& w, const ModelConfig& c) {
    const auto& b = c.backbone;
    w.u32(static_cast<std::uint32_t>(b.image_size));
    w.u32(static_cast<std::uint32_t>(b.patch_size));
    w.u32(static_cast<std::uint32_t>(b.embed_dim));
    w.u32(static_cast<std::uint32_t>(b.num_blocks));
    w.u32(static_cast<std::uint32_t>(b.num_heads));
    w.u32(static_cast<std::uint32_t>(b.adapter_mode));
    w.f64(b.bottleneck_ratio);
    w.f64(b.adapter_scale);
    const auto& h = c.heads;
    w.u32(static_cast<std::uint32_t>(h.local_mid_channels));
    w.u32(static_cast<std::uint32_t>(h.local_out_channels));
    w.u32(static_cast<std::uint32_t>(h.kernel));
    w.u32(static_cast<std::uint32_t>(h.stride));
    w.u32(static_cast<std::uint32_t>(h.padding));
    w.u32(static_cast<std::uint32_t>(h.global_mode));
    w.u32(h.learn_gem_p ? 1u : 0u);
    w.f64(h.gem_p);
}

ModelConfig read_config(BinaryReader& r) {
    ModelConfig c;
    auto& b = c.backbone;
    b.image_size = r.u32();
    b.patch_size = r.u32();
    b.embed_dim = r.u32();
    b.num_blocks = r.u32();
    b.num_heads = r.u32();
    const std::uint32_t mode = r.u32();
    if (mode > static_cast<std::uint32_t>(AdapterMode::both)) {
        throw FormatError(FormatError::Kind::invalid, "checkpoint: bad adapter mode " + std::to_string(mode));
    }
    b.adapter_mode = static_cast<AdapterMode>(mode);
    b.bottleneck_ratio = r.f64();
    b.adapter_scale = r.f64();
    auto& h = c.heads;
    h.local_mid_channels = r.u32();
    h.local_out_channels = r.u32();
    h.kernel = r.u32();
    h.stride = r.u32();
    h.padding = r.u32();
    const std::uint32_t gmode = r.u32();
    if (gmode > 1) throw FormatError(FormatError::Kind::invalid, "checkpoint: bad global mode");
    h.global_mode = static_cast<GlobalMode>(gmode);
    h.learn_gem_p = r.u32() != 0;
    h.gem_p = r.f64();
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(FormatError::Kind::invalid, std::string("checkpoint: ") + e.what());
    }
    return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelConfig& config, const ModelParams& params) {
    BinaryWriter w(path);
    w.bytes(kMagic, 4);
    w.u32(kCheckpointVersion);
    write_config(w, config);
    const auto refs = param_refs(params);
    w.u32(static_cast<std::uint32_t>(refs.size()));
    for (const auto& ref : refs) {
        w.u32(static_cast<std::uint32_t>(ref.name.size()));
        w.bytes(ref.name.data(), ref.name.size());
        const auto& shape = ref.tensor->shape();
        w.u32(static_cast<std::uint32_t>(shape.size()));
        for (std::size_t d : shape) w.u32(static_cast<std::uint32_t>(d));
        for (double v : ref.tensor->values()) w.f32(static_cast<float>(v));
    }
    w.finish();
}

Checkpoint load_checkpoint(const std::string& path) {
    BinaryReader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError(FormatError::Kind::bad_magic, "'" + path + "' is not a weight checkpoint");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw FormatError(FormatError::Kind::version_mismatch, "checkpoint version " + std::to_string(version) + " unsupported");
    }
    Checkpoint ck;
    ck.config = read_config(r);
    ck.params = init_model(ck.config, 0);

    std::map<std::string, Tensor*> by_name;
    for (auto& ref : param_refs(ck.params)) by_name[ref.name] = ref.tensor;

    const std::uint32_t count = r.u32();
    if (count != by_name.size()) {
        throw FormatError(FormatError::Kind::invalid, "checkpoint has " + std::to_string(count) + " arrays, model expects " +
                                                          std::to_string(by_name.size()));
    }
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t len = r.u32();
        if (len > 4096) throw FormatError(FormatError::Kind::invalid, "checkpoint: implausible name length");
        std::string name(len, '\0');
        r.bytes(name.data(), len);
        auto it = by_name.find(name);
        if (it == by_name.end()) throw FormatError(FormatError::Kind::invalid, "checkpoint: unknown array '" + name + "'");
        Tensor& t = *it->second;
        const std::uint32_t rank = r.u32();
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = r.u32();
        if (shape != t.shape()) throw FormatError(FormatError::Kind::invalid, "checkpoint: shape mismatch for '" + name + "'");
        for (double& v : t.values()) v = static_cast<double>(r.f32());
    }
    return ck;
}

}  // namespace tsvpr
