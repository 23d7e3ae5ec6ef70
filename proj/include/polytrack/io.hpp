#pragma once

// File formats: track annotations as JSON, rasters as binary PNM (P5/P6),
// network parameters as a JSON-headed flat float32 blob, plus JSON config
// parsing. Every writer goes through write-temp-then-rename so partial
// files never appear at their final paths.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "polytrack/errors.hpp"
#include "polytrack/geometry.hpp"
#include "polytrack/lam.hpp"
#include "polytrack/metrics.hpp"
#include "polytrack/synth.hpp"
#include "polytrack/tracker.hpp"

namespace polytrack {

namespace detail {

inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open for writing: " + tmp.string());
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) {
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw IoError("write failed: " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("rename failed: " + path.string() + " (" + ec.message() + ")");
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return bytes;
}

inline void require_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw SchemaError(std::string("non-finite value in ") + what);
}

}  // namespace detail

inline nlohmann::json load_json(const std::filesystem::path& path) {
    const std::string bytes = detail::read_file(path);
    try {
        return nlohmann::json::parse(bytes);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

// --- track annotations -----------------------------------------------------

inline void save_track(const std::filesystem::path& path, const TrackAnnotation& ann) {
    if (ann.frames.empty()) throw SchemaError("track: needs at least 1 frame");
    const std::size_t n = ann.frames[0].size();
    nlohmann::json frames = nlohmann::json::array();
    for (const PointSet& ps : ann.frames) {
        if (ps.size() != n) throw SchemaError("track: frames disagree on point count");
        nlohmann::json pts = nlohmann::json::array();
        nlohmann::json vis = nlohmann::json::array();
        for (std::size_t i = 0; i < ps.size(); ++i) {
            detail::require_finite(ps.points[i].x, "track points");
            detail::require_finite(ps.points[i].y, "track points");
            pts.push_back({ps.points[i].x, ps.points[i].y});
            vis.push_back(static_cast<bool>(ps.visible[i]));
        }
        frames.push_back({{"points", std::move(pts)}, {"visible", std::move(vis)}});
    }
    const nlohmann::json doc = {{"version", 1},
                                {"width", ann.width},
                                {"height", ann.height},
                                {"frames", std::move(frames)}};
    detail::write_file_atomic(path, doc.dump());
}

inline TrackAnnotation load_track(const std::filesystem::path& path) {
    const nlohmann::json doc = load_json(path);
    if (!doc.is_object()) throw SchemaError("track: root must be an object");
    if (!doc.contains("version") || !doc["version"].is_number_integer() ||
        doc["version"].get<int>() != 1)
        throw SchemaError("track: version must be 1");
    for (const char* key : {"width", "height", "frames"})
        if (!doc.contains(key)) throw SchemaError(std::string("track: missing key ") + key);
    if (!doc["width"].is_number_integer() || !doc["height"].is_number_integer())
        throw SchemaError("track: width/height must be integers");

    TrackAnnotation ann;
    ann.width = doc["width"].get<int>();
    ann.height = doc["height"].get<int>();
    if (ann.width <= 0 || ann.height <= 0)
        throw SchemaError("track: width/height must be positive");
    if (!doc["frames"].is_array() || doc["frames"].empty())
        throw SchemaError("track: frames must be a non-empty array");

    std::size_t n = 0;
    for (const auto& jf : doc["frames"]) {
        if (!jf.is_object() || !jf.contains("points") || !jf.contains("visible"))
            throw SchemaError("track: frame needs points and visible");
        const auto& jp = jf["points"];
        const auto& jv = jf["visible"];
        if (!jp.is_array() || !jv.is_array() || jp.size() != jv.size())
            throw SchemaError("track: points/visible must be equal-length arrays");
        PointSet ps;
        for (const auto& pt : jp) {
            if (!pt.is_array() || pt.size() != 2 || !pt[0].is_number() || !pt[1].is_number())
                throw SchemaError("track: each point must be [x, y]");
            const double x = pt[0].get<double>(), y = pt[1].get<double>();
            detail::require_finite(x, "track points");
            detail::require_finite(y, "track points");
            ps.points.push_back({x, y});
        }
        for (const auto& v : jv) {
            if (!v.is_boolean()) throw SchemaError("track: visible entries must be booleans");
            ps.visible.push_back(v.get<bool>() ? 1 : 0);
        }
        if (ann.frames.empty())
            n = ps.size();
        else if (ps.size() != n)
            throw SchemaError("track: frames disagree on point count");
        ann.frames.push_back(std::move(ps));
    }
    return ann;
}

// --- PNM rasters -------------------------------------------------------

inline void save_pnm(const std::filesystem::path& path, const FrameImage& img) {
    if (img.channels != 1 && img.channels != 3)
        throw UnsupportedFormat("save_pnm: only 1- or 3-channel images");
    std::string bytes = img.channels == 1 ? "P5" : "P6";
    bytes += "\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    bytes.reserve(bytes.size() + img.data.size());
    for (double v : img.data) {
        const long b = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
        bytes.push_back(static_cast<char>(static_cast<unsigned char>(b)));
    }
    detail::write_file_atomic(path, bytes);
}

inline FrameImage load_pnm(const std::filesystem::path& path) {
    const std::string bytes = detail::read_file(path);
    if (bytes.size() < 2) throw ParseError("pnm: file too short");
    if (bytes[0] != 'P') throw UnsupportedFormat("pnm: not a PNM file");
    const char kind = bytes[1];
    if (kind != '5' && kind != '6') {
        if (kind >= '1' && kind <= '7') throw UnsupportedFormat("pnm: only P5 and P6 supported");
        throw ParseError("pnm: bad magic number");
    }
    const int channels = kind == '5' ? 1 : 3;

    // Header tokens are separated by whitespace; '#' starts a comment that
    // runs to end of line.
    std::size_t pos = 2;
    auto next_int = [&]() -> long {
        while (pos < bytes.size()) {
            const char c = bytes[pos];
            if (c == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
                ++pos;
            } else {
                break;
            }
        }
        if (pos >= bytes.size() || bytes[pos] < '0' || bytes[pos] > '9')
            throw ParseError("pnm: malformed header");
        long v = 0;
        while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
            v = v * 10 + (bytes[pos] - '0');
            if (v > 1000000000L) throw ParseError("pnm: header value out of range");
            ++pos;
        }
        return v;
    };

    const long w = next_int();
    const long h = next_int();
    const long maxval = next_int();
    if (w <= 0 || h <= 0) throw ParseError("pnm: dimensions must be positive");
    if (maxval != 255) throw ParseError("pnm: only maxval 255 supported");
    if (pos >= bytes.size() ||
        (bytes[pos] != ' ' && bytes[pos] != '\t' && bytes[pos] != '\r' && bytes[pos] != '\n'))
        throw ParseError("pnm: missing whitespace after maxval");
    ++pos;

    const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * channels;
    if (bytes.size() - pos < need) throw ParseError("pnm: truncated payload");

    FrameImage img(static_cast<int>(w), static_cast<int>(h), channels);
    for (std::size_t i = 0; i < need; ++i)
        img.data[i] = static_cast<unsigned char>(bytes[pos + i]) / 255.0;
    return img;
}

// --- network parameter checkpoints --------------------------------------

// Layout: u64 little-endian header length, JSON header (architecture plus
// tensor names/shapes in visit order), then every tensor's values as
// little-endian float32 back to back. Loading and re-saving reproduces the
// file byte for byte.
inline void save_checkpoint(const std::filesystem::path& path, const LamParams& params) {
    nlohmann::json tensors = nlohmann::json::array();
    std::string payload;
    for_each_tensor(params, [&](const std::string& name, const std::vector<double>& v,
                                const std::vector<std::size_t>& shape) {
        tensors.push_back({name, shape});
        for (double x : v) {
            const auto u = std::bit_cast<std::uint32_t>(static_cast<float>(x));
            payload.push_back(static_cast<char>(u & 0xff));
            payload.push_back(static_cast<char>((u >> 8) & 0xff));
            payload.push_back(static_cast<char>((u >> 16) & 0xff));
            payload.push_back(static_cast<char>((u >> 24) & 0xff));
        }
    });
    const nlohmann::json header = {
        {"config",
         {{"c_in", params.c_in},
          {"c_hidden", params.c_hidden},
          {"heads", params.heads},
          {"kernel", params.kernel},
          {"blocks", params.blocks.size()},
          {"use_positional_encoding", params.use_positional_encoding}}},
        {"tensors", std::move(tensors)}};
    const std::string hs = header.dump();

    std::string bytes;
    bytes.reserve(8 + hs.size() + payload.size());
    const std::uint64_t len = hs.size();
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>((len >> (8 * i)) & 0xff));
    bytes += hs;
    bytes += payload;
    detail::write_file_atomic(path, bytes);
}

inline LamParams load_checkpoint(const std::filesystem::path& path) {
    const std::string bytes = detail::read_file(path);
    if (bytes.size() < 8) throw ParseError("checkpoint: file too short");
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i)
        len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[static_cast<std::size_t>(i)]))
               << (8 * i);
    if (bytes.size() - 8 < len) throw ParseError("checkpoint: truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(8, len));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("checkpoint: bad header: ") + e.what());
    }
    if (!header.contains("config") || !header.contains("tensors"))
        throw SchemaError("checkpoint: header needs config and tensors");
    const auto& jc = header["config"];
    for (const char* key :
         {"c_in", "c_hidden", "heads", "kernel", "blocks", "use_positional_encoding"})
        if (!jc.contains(key)) throw SchemaError(std::string("checkpoint: config missing ") + key);

    LamParams params = make_lam_params(
        jc["c_in"].get<int>() - 2, jc["c_hidden"].get<int>(), jc["blocks"].get<int>(),
        jc["heads"].get<int>(), jc["kernel"].get<int>(), jc["use_positional_encoding"].get<bool>());

    const auto& jt = header["tensors"];
    std::size_t ti = 0;
    std::size_t offset = 8 + len;
    for_each_tensor(params, [&](const std::string& name, std::vector<double>& v,
                                const std::vector<std::size_t>& shape) {
        if (ti >= jt.size()) throw SchemaError("checkpoint: missing tensor " + name);
        const auto& entry = jt[ti++];
        if (!entry.is_array() || entry.size() != 2 || entry[0].get<std::string>() != name)
            throw SchemaError("checkpoint: tensor order mismatch at " + name);
        const auto got = entry[1].get<std::vector<std::size_t>>();
        if (got != shape) throw SchemaError("checkpoint: shape mismatch for " + name);
        if (bytes.size() - offset < v.size() * 4)
            throw ParseError("checkpoint: truncated tensor data at " + name);
        for (double& x : v) {
            std::uint32_t u = 0;
            for (int i = 0; i < 4; ++i)
                u |= static_cast<std::uint32_t>(
                         static_cast<unsigned char>(bytes[offset + static_cast<std::size_t>(i)]))
                     << (8 * i);
            x = static_cast<double>(std::bit_cast<float>(u));
            offset += 4;
        }
    });
    if (ti != jt.size()) throw SchemaError("checkpoint: extra tensors in header");
    if (offset != bytes.size()) throw ParseError("checkpoint: trailing bytes");
    return params;
}

// --- JSON configuration ---------------------------------------------------

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j,
                                std::initializer_list<const char*> allowed,
                                const char* what) {
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* k : allowed)
            if (item.key() == k) {
                ok = true;
                break;
            }
        if (!ok) throw SchemaError(std::string(what) + ": unknown key \"" + item.key() + "\"");
    }
}

inline JitterRanges jitter_from_json(const nlohmann::json& j, const char* what) {
    if (!j.is_object()) throw SchemaError(std::string(what) + " must be an object");
    reject_unknown_keys(j, {"rotation_deg", "scale", "translation"}, what);
    JitterRanges r;
    if (j.contains("rotation_deg")) r.rotation_deg = j["rotation_deg"].get<double>();
    if (j.contains("scale")) r.scale = j["scale"].get<double>();
    if (j.contains("translation")) r.translation = j["translation"].get<double>();
    return r;
}

}  // namespace detail

inline SynthConfig synth_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw SchemaError("synth config must be an object");
    detail::reject_unknown_keys(j,
                                {"seed", "frames", "points", "canvas", "objects", "mls_controls",
                                 "mls_max_shift", "object_jitter", "background_jitter"},
                                "synth config");
    SynthConfig cfg;
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("frames")) cfg.frames = j["frames"].get<int>();
    if (j.contains("points")) cfg.points = j["points"].get<int>();
    if (j.contains("canvas")) {
        const auto& c = j["canvas"];
        if (!c.is_array() || c.size() != 2)
            throw SchemaError("synth config: canvas must be [width, height]");
        cfg.canvas_width = c[0].get<int>();
        cfg.canvas_height = c[1].get<int>();
    }
    if (j.contains("objects")) cfg.objects = j["objects"].get<int>();
    if (j.contains("mls_controls")) cfg.mls_controls = j["mls_controls"].get<int>();
    if (j.contains("mls_max_shift")) cfg.mls_max_shift = j["mls_max_shift"].get<double>();
    if (j.contains("object_jitter"))
        cfg.object_jitter = detail::jitter_from_json(j["object_jitter"], "object_jitter");
    if (j.contains("background_jitter"))
        cfg.background_jitter =
            detail::jitter_from_json(j["background_jitter"], "background_jitter");
    return cfg;
}

struct TrackerConfigFile {
    TrackerConfig config;
    std::optional<std::string> checkpoint;  // lam parameter file, loaded by the caller
};

inline TrackerConfigFile tracker_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw SchemaError("tracker config must be an object");
    detail::reject_unknown_keys(
        j,
        {"n_points", "local_iters", "pyramid_strides", "backend", "global_levels",
         "global_steps", "w_edge", "w_r1", "w_r2", "crop_scale", "checkpoint"},
        "tracker config");
    TrackerConfigFile out;
    TrackerConfig& cfg = out.config;
    if (j.contains("n_points")) cfg.n_points = j["n_points"].get<int>();
    if (j.contains("local_iters")) cfg.local_iters = j["local_iters"].get<int>();
    if (j.contains("pyramid_strides"))
        cfg.pyramid_strides = j["pyramid_strides"].get<std::vector<int>>();
    if (j.contains("backend")) {
        const std::string b = j["backend"].get<std::string>();
        if (b == "energy")
            cfg.backend = Backend::energy;
        else if (b == "lam")
            cfg.backend = Backend::lam;
        else
            throw SchemaError("tracker config: backend must be \"energy\" or \"lam\"");
    }
    if (j.contains("global_levels")) cfg.global_levels = j["global_levels"].get<int>();
    if (j.contains("global_steps")) cfg.global_steps = j["global_steps"].get<int>();
    if (j.contains("w_edge")) cfg.w_edge = j["w_edge"].get<double>();
    if (j.contains("w_r1")) cfg.w_r1 = j["w_r1"].get<double>();
    if (j.contains("w_r2")) cfg.w_r2 = j["w_r2"].get<double>();
    if (j.contains("crop_scale")) cfg.crop_scale = j["crop_scale"].get<double>();
    if (j.contains("checkpoint")) out.checkpoint = j["checkpoint"].get<std::string>();
    return out;
}

}  // namespace polytrack
