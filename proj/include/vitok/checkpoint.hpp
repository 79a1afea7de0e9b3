#pragma once

#include <fstream>

#include "vitok/params.hpp"

namespace vitok {

namespace detail {

inline void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("checkpoint truncated");
    return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
           static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

inline void put_f32(std::ostream& os, float f) {
    put_u32(os, std::bit_cast<uint32_t>(f));
}

inline float get_f32(std::istream& is) { return std::bit_cast<float>(get_u32(is)); }

inline void put_str(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_str(std::istream& is) {
    uint32_t n = get_u32(is);
    if (n > (1u << 20)) throw std::runtime_error("checkpoint string length implausible");
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw std::runtime_error("checkpoint truncated");
    return s;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[] = "VTOK1";

// Layout: magic, key=value metadata entries, then name-sorted tensors as
// (name, rank, dims, little-endian f32 data).
inline void save_checkpoint(const std::string& path, const ParamStore& ps,
                            const std::map<std::string, std::string>& meta) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write checkpoint " + path);
    os.write(kCheckpointMagic, 5);
    detail::put_u32(os, static_cast<uint32_t>(meta.size()));
    for (const auto& [k, v] : meta) {
        detail::put_str(os, k);
        detail::put_str(os, v);
    }
    detail::put_u32(os, static_cast<uint32_t>(ps.tensors.size()));
    for (const auto& [name, t] : ps.tensors) {
        detail::put_str(os, name);
        detail::put_u32(os, static_cast<uint32_t>(t.rank()));
        for (int d : t.shape()) detail::put_u32(os, static_cast<uint32_t>(d));
        for (double v : t.raw()) detail::put_f32(os, static_cast<float>(v));
    }
    if (!os) throw std::runtime_error("short write on checkpoint " + path);
}

inline std::pair<ParamStore, std::map<std::string, std::string>> load_checkpoint(
    const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint " + path);
    char magic[5];
    is.read(magic, 5);
    if (!is || std::memcmp(magic, kCheckpointMagic, 5) != 0)
        throw std::runtime_error(path + " is not a checkpoint (bad magic)");
    std::map<std::string, std::string> meta;
    uint32_t nmeta = detail::get_u32(is);
    for (uint32_t i = 0; i < nmeta; ++i) {
        std::string k = detail::get_str(is);
        meta[k] = detail::get_str(is);
    }
    ParamStore ps;
    uint32_t nt = detail::get_u32(is);
    for (uint32_t i = 0; i < nt; ++i) {
        std::string name = detail::get_str(is);
        uint32_t rank = detail::get_u32(is);
        if (rank > 16) throw std::runtime_error("checkpoint tensor rank implausible");
        Shape shape;
        for (uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(detail::get_u32(is)));
        Tensor t(shape);
        for (double& v : t.raw()) v = static_cast<double>(detail::get_f32(is));
        t.set_requires_grad(true);
        ps.tensors.emplace(name, std::move(t));
    }
    return {std::move(ps), std::move(meta)};
}

inline std::map<std::string, std::string> config_to_kv(const ModelConfig& cfg) {
    std::map<std::string, std::string> kv;
    kv["model.q"] = std::to_string(cfg.q);
    kv["model.p"] = std::to_string(cfg.p);
    kv["model.c"] = std::to_string(cfg.c);
    kv["model.encoder_size"] = cfg.encoder_size;
    kv["model.decoder_size"] = cfg.decoder_size;
    kv["model.variant"] = cfg.variant;
    kv["model.l_latent"] = std::to_string(cfg.l_latent);
    kv["model.min_tokens"] = std::to_string(cfg.min_tokens);
    kv["model.frames"] = std::to_string(cfg.T);
    kv["model.height"] = std::to_string(cfg.H);
    kv["model.width"] = std::to_string(cfg.W);
    if (cfg.scale_override) {
        kv["model.tiny_hidden"] = std::to_string(cfg.scale_override->hidden);
        kv["model.tiny_blocks"] = std::to_string(cfg.scale_override->blocks);
        kv["model.tiny_heads"] = std::to_string(cfg.scale_override->heads);
    }
    return kv;
}

inline ModelConfig config_from_kv(const std::map<std::string, std::string>& kv) {
    ModelConfig cfg;
    auto geti = [&kv](const char* k, int dflt) {
        auto it = kv.find(k);
        return it == kv.end() ? dflt : std::stoi(it->second);
    };
    auto gets = [&kv](const char* k, const char* dflt) {
        auto it = kv.find(k);
        return it == kv.end() ? std::string(dflt) : it->second;
    };
    cfg.q = geti("model.q", cfg.q);
    cfg.p = geti("model.p", cfg.p);
    cfg.c = geti("model.c", cfg.c);
    cfg.encoder_size = gets("model.encoder_size", cfg.encoder_size.c_str());
    cfg.decoder_size = gets("model.decoder_size", cfg.decoder_size.c_str());
    cfg.variant = gets("model.variant", cfg.variant.c_str());
    cfg.l_latent = geti("model.l_latent", cfg.l_latent);
    cfg.min_tokens = geti("model.min_tokens", cfg.min_tokens);
    cfg.T = geti("model.frames", cfg.T);
    cfg.H = geti("model.height", cfg.H);
    cfg.W = geti("model.width", cfg.W);
    if (kv.count("model.tiny_hidden")) {
        SizePreset s;
        s.hidden = geti("model.tiny_hidden", 0);
        s.blocks = geti("model.tiny_blocks", 0);
        s.heads = geti("model.tiny_heads", 0);
        cfg.scale_override = s;
    }
    cfg.validate();
    return cfg;
}

}  // namespace vitok
