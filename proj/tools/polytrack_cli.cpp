// Command-line front end: synthetic data generation, tracking, evaluation,
// gradient self-checks, and overlay rendering.
//
// Exit codes: 0 success, 1 usage error, 2 data error.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "polytrack/gradcheck.hpp"
#include "polytrack/polytrack.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Raster files of one directory, sorted by name; the frame order contract.
std::vector<fs::path> list_frames(const fs::path& dir) {
    if (!fs::is_directory(dir))
        throw polytrack::IoError("not a directory: " + dir.string());
    std::vector<fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string ext = entry.path().extension().string();
        if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") out.push_back(entry.path());
    }
    std::sort(out.begin(), out.end());
    if (out.empty()) throw polytrack::IoError("no .pgm/.ppm frames in " + dir.string());
    return out;
}

std::string frame_name(int index, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%04d.%s", index, ext);
    return buf;
}

void hsv_color(double hue01, unsigned char rgb[3]) {
    const double h = hue01 * 6.0;
    const int i = static_cast<int>(h) % 6;
    const double f = h - std::floor(h);
    const double q = 1.0 - f;
    double r = 0, g = 0, b = 0;
    switch (i) {
        case 0: r = 1; g = f; break;
        case 1: r = q; g = 1; break;
        case 2: g = 1; b = f; break;
        case 3: g = q; b = 1; break;
        case 4: r = f; b = 1; break;
        default: r = 1; b = q; break;
    }
    rgb[0] = static_cast<unsigned char>(std::lround(r * 255));
    rgb[1] = static_cast<unsigned char>(std::lround(g * 255));
    rgb[2] = static_cast<unsigned char>(std::lround(b * 255));
}

void put_pixel(polytrack::FrameImage& img, int x, int y, const unsigned char rgb[3]) {
    if (x < 0 || x >= img.width || y < 0 || y >= img.height) return;
    for (int c = 0; c < 3; ++c) img.at(x, y, c) = rgb[c] / 255.0;
}

void draw_line(polytrack::FrameImage& img, polytrack::Vec2 a, polytrack::Vec2 b,
               const unsigned char rgb[3]) {
    int x0 = static_cast<int>(std::lround(a.x)), y0 = static_cast<int>(std::lround(a.y));
    const int x1 = static_cast<int>(std::lround(b.x)), y1 = static_cast<int>(std::lround(b.y));
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
        put_pixel(img, x0, y0, rgb);
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

void draw_dot(polytrack::FrameImage& img, polytrack::Vec2 p, const unsigned char rgb[3]) {
    const int cx = static_cast<int>(std::lround(p.x)), cy = static_cast<int>(std::lround(p.y));
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) put_pixel(img, cx + dx, cy + dy, rgb);
}

polytrack::FrameImage to_rgb(const polytrack::FrameImage& img) {
    if (img.channels == 3) return img;
    polytrack::FrameImage out(img.width, img.height, 3);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(x, y, 0);
    return out;
}

// Seeded object/background imagery for one synthetic sequence. A separate
// stream from the generator's own so asset and motion randomness do not
// interleave.
struct SynthAssets {
    polytrack::FrameImage object_mask, object_image, background;
};

SynthAssets make_assets(const polytrack::SynthConfig& cfg) {
    polytrack::Rng rng(cfg.seed ^ 0x5DEECE66DULL);
    const int ow = std::max(16, cfg.canvas_width / 2);
    const int oh = std::max(16, cfg.canvas_height / 2);
    SynthAssets a;
    a.object_mask = polytrack::make_blob_mask(ow, oh, rng);
    a.object_image = polytrack::make_texture(ow, oh, 3, rng, 0.7, 0.3);
    const int bw = cfg.canvas_width * 3 / 2, bh = cfg.canvas_height * 3 / 2;
    a.background = polytrack::make_texture(bw, bh, 3, rng, 0.3, 0.25);
    return a;
}

int cmd_synth(const fs::path& config_path, const fs::path& out_dir, int count) {
    const polytrack::SynthConfig base =
        polytrack::synth_config_from_json(polytrack::load_json(config_path));
    fs::create_directories(out_dir);

    json manifest;
    manifest["sequences"] = json::array();
    for (int s = 0; s < count; ++s) {
        polytrack::SynthConfig cfg = base;
        cfg.seed = base.seed + static_cast<std::uint64_t>(s);
        const SynthAssets assets = make_assets(cfg);
        const polytrack::SyntheticSequence seq =
            polytrack::generate_sequence(cfg, assets.object_mask, assets.object_image,
                                         assets.background);

        char seq_name[32];
        std::snprintf(seq_name, sizeof seq_name, "seq_%03d", s);
        const fs::path seq_dir = out_dir / seq_name;
        fs::create_directories(seq_dir);

        json frame_list = json::array();
        for (std::size_t t = 0; t < seq.frames.size(); ++t) {
            const std::string name = frame_name(static_cast<int>(t), "ppm");
            polytrack::save_pnm(seq_dir / name, seq.frames[t]);
            frame_list.push_back(std::string(seq_name) + "/" + name);
        }
        polytrack::save_track(seq_dir / "gt.json", seq.gt);

        manifest["sequences"].push_back(
            {{"seed", cfg.seed},
             {"frames", std::move(frame_list)},
             {"gt", std::string(seq_name) + "/gt.json"},
             {"config",
              {{"frames", cfg.frames},
               {"points", cfg.points},
               {"canvas", {cfg.canvas_width, cfg.canvas_height}},
               {"objects", cfg.objects},
               {"mls_controls", cfg.mls_controls},
               {"mls_max_shift", cfg.mls_max_shift}}}});
    }
    polytrack::detail::write_file_atomic(out_dir / "manifest.json", manifest.dump(2) + "\n");
    std::cout << "wrote " << count << " sequence(s) under " << out_dir.string() << "\n";
    return 0;
}

int cmd_track(const fs::path& frames_dir, const fs::path& init_path,
              const fs::path& config_path, const fs::path& out_path) {
    polytrack::TrackerConfigFile cf;
    if (!config_path.empty())
        cf = polytrack::tracker_config_from_json(polytrack::load_json(config_path));
    if (cf.config.backend == polytrack::Backend::lam) {
        if (!cf.checkpoint)
            throw polytrack::SchemaError("tracker config: lam backend needs \"checkpoint\"");
        cf.config.lam = polytrack::load_checkpoint(cf.checkpoint.value());
    }

    std::vector<polytrack::FrameImage> frames;
    for (const fs::path& p : list_frames(frames_dir)) frames.push_back(polytrack::load_pnm(p));

    const polytrack::TrackAnnotation init = polytrack::load_track(init_path);
    const polytrack::TrackAnnotation pred =
        polytrack::track_sequence(frames, init.frames.at(0), cf.config);
    polytrack::save_track(out_path, pred);
    std::cout << "tracked " << frames.size() << " frame(s) -> " << out_path.string() << "\n";
    return 0;
}

std::vector<double> parse_taus(const std::string& taus, std::vector<std::string>& labels) {
    std::vector<double> out;
    std::string token;
    for (std::size_t i = 0; i <= taus.size(); ++i) {
        if (i == taus.size() || taus[i] == ',') {
            if (!token.empty()) {
                try {
                    out.push_back(std::stod(token));
                } catch (const std::exception&) {
                    throw polytrack::SchemaError("bad tau value: " + token);
                }
                labels.push_back(token);
                token.clear();
            }
        } else {
            token.push_back(taus[i]);
        }
    }
    if (out.empty()) throw polytrack::SchemaError("no tau values given");
    return out;
}

int cmd_eval(const fs::path& pred_path, const fs::path& gt_path, const std::string& taus,
             const fs::path& pred_masks, const fs::path& gt_masks) {
    const polytrack::TrackAnnotation pred = polytrack::load_track(pred_path);
    const polytrack::TrackAnnotation gt = polytrack::load_track(gt_path);

    std::vector<std::string> labels;
    const std::vector<double> tau_values = parse_taus(taus, labels);

    json report;
    report["sa"] = json::object();
    report["ta"] = json::object();
    for (std::size_t i = 0; i < tau_values.size(); ++i)
        report["sa"][labels[i]] = polytrack::spatial_accuracy(pred, gt, tau_values[i]);
    if (gt.frames.size() >= 2)
        for (std::size_t i = 0; i < tau_values.size(); ++i)
            report["ta"][labels[i]] = polytrack::temporal_accuracy(pred, gt, tau_values[i]);

    if (!pred_masks.empty() || !gt_masks.empty()) {
        if (pred_masks.empty() || gt_masks.empty())
            throw polytrack::SchemaError("eval: --pred-masks and --gt-masks go together");
        const auto pm = list_frames(pred_masks);
        const auto gm = list_frames(gt_masks);
        if (pm.size() != gm.size())
            throw polytrack::SchemaError("eval: mask directories disagree on frame count");
        double j = 0, f = 0, acc = 0;
        for (std::size_t i = 0; i < pm.size(); ++i) {
            const polytrack::FrameImage a = polytrack::load_pnm(pm[i]);
            const polytrack::FrameImage b = polytrack::load_pnm(gm[i]);
            j += polytrack::region_similarity(a, b);
            f += polytrack::boundary_accuracy(a, b);
            acc += polytrack::average_accuracy(a, b);
        }
        report["j"] = j / static_cast<double>(pm.size());
        report["f"] = f / static_cast<double>(pm.size());
        report["avg_acc"] = acc / static_cast<double>(pm.size());
    }

    std::cout << report.dump() << "\n";
    return 0;
}

int cmd_check_grad() {
    const std::vector<polytrack::GradCheckReport> reports = polytrack::run_gradient_checks();
    bool all = true;
    for (const auto& r : reports) {
        std::cout << (r.pass ? "PASS" : "FAIL") << "  " << r.name << "  max_rel_err="
                  << r.max_rel_err << "  tol=" << r.tolerance << "\n";
        all = all && r.pass;
    }
    return all ? 0 : 2;
}

int cmd_overlay(const fs::path& frames_dir, const fs::path& track_path,
                const fs::path& out_dir) {
    const polytrack::TrackAnnotation track = polytrack::load_track(track_path);
    const auto frame_paths = list_frames(frames_dir);
    if (frame_paths.size() != track.frames.size())
        throw polytrack::SchemaError("overlay: frame count != annotation frame count");
    fs::create_directories(out_dir);

    const unsigned char outline[3] = {255, 255, 255};
    for (std::size_t t = 0; t < frame_paths.size(); ++t) {
        polytrack::FrameImage img = to_rgb(polytrack::load_pnm(frame_paths[t]));
        const polytrack::PointSet& ps = track.frames[t];
        const std::size_t n = ps.size();
        for (std::size_t i = 0; i < n; ++i)
            draw_line(img, ps.points[i], ps.points[(i + 1) % n], outline);
        for (std::size_t i = 0; i < n; ++i) {
            unsigned char rgb[3];
            hsv_color(static_cast<double>(i) / static_cast<double>(n), rgb);
            draw_dot(img, ps.points[i], rgb);
        }
        polytrack::save_pnm(out_dir / frame_name(static_cast<int>(t), "ppm"), img);
    }
    std::cout << "wrote " << frame_paths.size() << " overlay frame(s)\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"polygonal point set tracking toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_path, frames_dir, init_path, pred_path, gt_path;
    std::string taus = ".04,.08,.16", pred_masks, gt_masks, track_path;
    int count = 1;

    CLI::App* synth = app.add_subcommand("synth", "generate synthetic sequences");
    synth->add_option("--config", config_path, "synth config JSON")->required();
    synth->add_option("--out", out_path, "output directory")->required();
    synth->add_option("--count", count, "number of sequences (seed increments)");

    CLI::App* track = app.add_subcommand("track", "propagate a point set through frames");
    track->add_option("--frames", frames_dir, "directory of PNM frames")->required();
    track->add_option("--init", init_path, "initial annotation JSON (frame 0 used)")->required();
    track->add_option("--config", config_path, "tracker config JSON");
    track->add_option("--out", out_path, "output annotation JSON")->required();

    CLI::App* eval = app.add_subcommand("eval", "score a prediction against ground truth");
    eval->add_option("--pred", pred_path, "predicted annotation JSON")->required();
    eval->add_option("--gt", gt_path, "ground-truth annotation JSON")->required();
    eval->add_option("--taus", taus, "comma-separated thresholds");
    eval->add_option("--pred-masks", pred_masks, "directory of predicted masks (enables J/F)");
    eval->add_option("--gt-masks", gt_masks, "directory of ground-truth masks");

    app.add_subcommand("check-grad", "run all finite-difference gradient suites");

    CLI::App* overlay = app.add_subcommand("overlay", "draw tracked polygons onto frames");
    overlay->add_option("--frames", frames_dir, "directory of PNM frames")->required();
    overlay->add_option("--track", track_path, "annotation JSON to draw")->required();
    overlay->add_option("--out", out_path, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << e.what() << "\n";
        return 1;
    }

    try {
        if (app.got_subcommand("synth")) return cmd_synth(config_path, out_path, count);
        if (app.got_subcommand("track"))
            return cmd_track(frames_dir, init_path, config_path, out_path);
        if (app.got_subcommand("eval"))
            return cmd_eval(pred_path, gt_path, taus, pred_masks, gt_masks);
        if (app.got_subcommand("check-grad")) return cmd_check_grad();
        if (app.got_subcommand("overlay")) return cmd_overlay(frames_dir, track_path, out_path);
    } catch (const polytrack::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
