// Command-line front end: inference over a sequence manifest, metric
// evaluation, the verification report, a micro-benchmark, and the memory
// policy simulator.

#include "stma/embed.hpp"
#include "stma/idassoc.hpp"
#include "stma/image.hpp"
#include "stma/memory.hpp"
#include "stma/metrics.hpp"
#include "stma/pipeline.hpp"
#include "stma/stml.hpp"
#include "stma/synth.hpp"
#include "stma/verify.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct ManifestEntry {
    std::string frame_path;
    std::string mask_path;  // empty when absent
};

std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open manifest: " + path);
    const fs::path base = fs::path(path).parent_path();
    std::vector<ManifestEntry> entries;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        ManifestEntry e;
        ls >> e.frame_path >> e.mask_path;
        if (e.frame_path.empty()) continue;
        auto resolve = [&](std::string& p) {
            if (!p.empty() && fs::path(p).is_relative()) p = (base / p).string();
        };
        resolve(e.frame_path);
        resolve(e.mask_path);
        entries.push_back(std::move(e));
    }
    if (entries.empty()) throw std::runtime_error("manifest lists no frames: " + path);
    return entries;
}

std::string frame_name(std::size_t index, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%05zu.%s", index, ext);
    return buf;
}

stma::ModelConfig config_from_options(const std::string& config_path) {
    stma::ModelConfig cfg;
    if (!config_path.empty()) {
        cfg = stma::load_model_config(config_path);
    } else {
        stma::apply_seed_env(cfg);
    }
    return cfg;
}

int cmd_run(const std::string& config_path, const std::string& manifest_path,
            const std::string& out_dir, const std::string& format) {
    stma::ModelConfig cfg = config_from_options(config_path);
    const auto manifest = load_manifest(manifest_path);
    if (manifest.front().mask_path.empty())
        throw std::runtime_error("first manifest entry needs a ground-truth mask");

    fs::create_directories(out_dir);
    const char* ext = format == "png" ? "png" : "pgm";

    stma::Frame frame0 = stma::pad_frame(stma::load_frame(manifest[0].frame_path), cfg.patch_size);
    stma::TargetMasks masks0 =
        stma::pad_masks(stma::load_masks(manifest[0].mask_path), cfg.patch_size);
    cfg.frame_height = frame0.height;
    cfg.frame_width = frame0.width;

    stma::Segmenter seg(cfg, stma::init_model_weights(cfg));
    seg.initialize(frame0, masks0);
    stma::save_masks((fs::path(out_dir) / frame_name(0, ext)).string(), masks0);

    std::ofstream log((fs::path(out_dir) / "metrics.jsonl").string());
    std::vector<stma::FrameEval> evals;
    for (std::size_t k = 1; k < manifest.size(); ++k) {
        stma::Frame frame = stma::pad_frame(stma::load_frame(manifest[k].frame_path), cfg.patch_size);
        const stma::StepResult res = seg.step(frame);
        stma::save_masks((fs::path(out_dir) / frame_name(k, ext)).string(), res.masks);

        json rec;
        rec["frame"] = k;
        rec["targets"] = seg.target_count();
        if (!manifest[k].mask_path.empty()) {
            stma::TargetMasks gt =
                stma::pad_masks(stma::load_masks(manifest[k].mask_path), cfg.patch_size);
            std::vector<double> js, fsv;
            for (int j = 1; j <= static_cast<int>(seg.target_count()); ++j) {
                const double jv = stma::region_similarity_j(res.masks, gt, j);
                const double fv = stma::contour_accuracy_f(res.masks, gt, j);
                js.push_back(jv);
                fsv.push_back(fv);
                evals.push_back({k, j, jv, fv});
            }
            rec["J"] = js;
            rec["F"] = fsv;
        }
        log << rec.dump() << "\n";
    }
    if (!evals.empty()) {
        const stma::EvalSummary s = stma::summarize(evals);
        json rec;
        rec["summary"] = {{"mean_J", s.mean_j}, {"mean_F", s.mean_f}, {"J&F", s.jf}};
        log << rec.dump() << "\n";
        std::cout << "mean_J=" << s.mean_j << " mean_F=" << s.mean_f << " J&F=" << s.jf << "\n";
    }
    std::cout << "wrote " << manifest.size() << " masks to " << out_dir << "\n";
    return 0;
}

int cmd_eval(const std::string& pred_dir, const std::string& gt_dir, double tolerance) {
    auto list_masks = [](const std::string& dir) {
        std::vector<std::string> names;
        for (const auto& e : fs::directory_iterator(dir)) {
            const std::string ext = e.path().extension().string();
            if (ext == ".pgm" || ext == ".png") names.push_back(e.path().filename().string());
        }
        std::sort(names.begin(), names.end());
        return names;
    };
    const auto preds = list_masks(pred_dir);
    std::vector<stma::FrameEval> evals;
    std::cout << "frame\ttarget\tJ\tF\n";
    std::size_t frame_no = 0;
    for (const auto& name : preds) {
        const fs::path gt_path = fs::path(gt_dir) / name;
        if (!fs::exists(gt_path)) continue;
        const stma::TargetMasks pred = stma::load_masks((fs::path(pred_dir) / name).string());
        const stma::TargetMasks gt = stma::load_masks(gt_path.string());
        const int n = gt.max_id();
        for (int j = 1; j <= n; ++j) {
            const double jv = stma::region_similarity_j(pred, gt, j);
            const double fv = stma::contour_accuracy_f(pred, gt, j, tolerance);
            evals.push_back({frame_no, j, jv, fv});
            std::cout << name << "\t" << j << "\t" << jv << "\t" << fv << "\n";
        }
        ++frame_no;
    }
    const stma::EvalSummary s = stma::summarize(evals);
    std::cout << "mean\t-\t" << s.mean_j << "\t" << s.mean_f << "\n";
    std::cout << "J&F\t-\t" << s.jf << "\t-\n";
    return 0;
}

int cmd_bench(const std::string& config_path, int iters) {
    stma::ModelConfig cfg = config_from_options(config_path);
    const stma::ModelWeights weights = stma::init_model_weights(cfg);

    stma::SequenceSpec spec;
    spec.height = cfg.frame_height;
    spec.width = cfg.frame_width;
    spec.length = 2;
    spec.targets = 2;
    spec.seed = cfg.seed;
    const stma::SyntheticSequence seq = stma::generate_sequence(spec);

    const stma::FeatureMap feat = stma::embed(seq.frames[0], weights.embed);
    stma::StmlState state{feat, {feat, feat}, stma::ObjectFeatures{stma::Tensor::zeros({2, cfg.channel_dim})}};
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < iters; ++i)
        state.test = stma::stml_forward(state, weights.stml, {cfg.mode, cfg.update_objects}).test;
    const auto t1 = std::chrono::steady_clock::now();
    const double stml_s = std::chrono::duration<double>(t1 - t0).count();
    const double tokens = static_cast<double>(feat.token_count() * iters);
    std::cout << "stml_forward\t" << tokens / stml_s << "\ttokens/s\n";

    stma::Segmenter seg(cfg, weights);
    seg.initialize(seq.frames[0], seq.masks[0]);
    const auto t2 = std::chrono::steady_clock::now();
    for (int i = 0; i < iters; ++i) seg.step(seq.frames[1]);
    const auto t3 = std::chrono::steady_clock::now();
    const double seg_s = std::chrono::duration<double>(t3 - t2).count();
    std::cout << "segment_frame\t" << tokens / seg_s << "\ttokens/s\t("
              << static_cast<double>(iters) / seg_s << " frames/s)\n";
    return 0;
}

int cmd_synth(const std::string& out_dir, std::size_t length, std::size_t targets,
              std::uint64_t seed, const std::string& format) {
    stma::SequenceSpec spec;
    spec.length = length;
    spec.targets = targets;
    spec.seed = seed;
    const stma::SyntheticSequence seq = stma::generate_sequence(spec);

    const char* mask_ext = format == "png" ? "png" : "pgm";
    const char* frame_ext = format == "png" ? "png" : "ppm";
    fs::create_directories(fs::path(out_dir) / "frames");
    fs::create_directories(fs::path(out_dir) / "gt");
    std::ofstream manifest((fs::path(out_dir) / "manifest.txt").string());
    for (std::size_t k = 0; k < spec.length; ++k) {
        const std::string f = "frames/" + frame_name(k, frame_ext);
        const std::string m = "gt/" + frame_name(k, mask_ext);
        stma::save_frame((fs::path(out_dir) / f).string(), seq.frames[k]);
        stma::save_masks((fs::path(out_dir) / m).string(), seq.masks[k]);
        manifest << f << " " << m << "\n";
    }
    std::cout << "wrote " << spec.length << " frames + masks + manifest.txt to " << out_dir << "\n";
    return 0;
}

int cmd_simulate_memory(const std::string& trace_path, std::size_t capacity, bool pin_first) {
    std::ifstream is(trace_path);
    if (!is) throw std::runtime_error("cannot open trace: " + trace_path);
    stma::TemporalMemory mem(capacity, pin_first);
    std::string op;
    std::size_t line_no = 0;
    while (is >> op) {
        ++line_no;
        if (op == "insert") {
            std::size_t idx = 0;
            is >> idx;
            const auto evicted = mem.insert(idx, stma::Tensor::zeros({1, 1}),
                                            stma::Tensor::zeros({1, 1, 1}));
            if (evicted) std::cout << "evict\t" << *evicted << "\n";
        } else if (op == "touch") {
            std::size_t frame = 0;
            double amount = 0.0;
            is >> frame >> amount;
            stma::UsageUpdate up;
            up.increments.assign(mem.size(), 0.0);
            bool found = false;
            for (std::size_t i = 0; i < mem.size(); ++i)
                if (mem.entries()[i].frame_index == frame) {
                    up.increments[i] = amount;
                    found = true;
                }
            if (!found) throw std::runtime_error("touch names absent frame " + std::to_string(frame));
            mem.touch(up);
        } else {
            throw std::runtime_error("unknown trace op '" + op + "' at token " +
                                     std::to_string(line_no));
        }
    }
    for (const auto& e : mem.entries())
        std::cout << "state\t" << e.frame_index << "\t" << e.usage << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Decomposed spatial-temporal attention video segmenter"};
    app.require_subcommand(1);

    std::string config_path, manifest_path, out_dir, format = "pgm";
    auto* run = app.add_subcommand("run", "segment a sequence manifest");
    run->add_option("--config", config_path, "key=value config file");
    run->add_option("--sequence", manifest_path, "manifest: frame path + optional mask path per line")
        ->required();
    run->add_option("--out", out_dir, "output directory")->required();
    run->add_option("--format", format, "mask format: pgm|png")
        ->check(CLI::IsMember({"pgm", "png"}));

    std::string pred_dir, gt_dir;
    double tolerance = 0.0;
    auto* eval = app.add_subcommand("eval", "score predicted masks against ground truth");
    eval->add_option("--pred", pred_dir, "predicted mask directory")->required();
    eval->add_option("--gt", gt_dir, "ground-truth mask directory")->required();
    eval->add_option("--tolerance", tolerance, "boundary tolerance in px (0 = default)");

    std::string fault;
    std::uint64_t verify_seed = 20240817;
    auto* verify = app.add_subcommand("verify", "run the oracle/property report");
    verify->add_option("--inject-fault", fault, "negative control: break-mask")
        ->check(CLI::IsMember({"break-mask"}));
    verify->add_option("--seed", verify_seed, "seed for randomized checks");

    int iters = 20;
    std::string bench_config;
    auto* bench = app.add_subcommand("bench", "throughput of stml_forward and segment_frame");
    bench->add_option("--config", bench_config, "key=value config file");
    bench->add_option("--iters", iters, "iterations");

    std::string synth_dir, synth_format = "ppm";
    std::size_t synth_len = 20, synth_targets = 2;
    std::uint64_t synth_seed = 7;
    auto* synth = app.add_subcommand("synth", "write a synthetic moving-shapes sequence");
    synth->add_option("--out", synth_dir, "output directory")->required();
    synth->add_option("--length", synth_len, "frame count");
    synth->add_option("--targets", synth_targets, "target count");
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--format", synth_format, "image format: ppm|png")
        ->check(CLI::IsMember({"ppm", "png"}));

    std::string trace_path;
    std::size_t capacity = 4;
    bool no_pin = false;
    auto* sim = app.add_subcommand("simulate-memory", "replay a temporal-memory trace");
    sim->add_option("trace", trace_path, "trace file: insert <idx> | touch <frame> <amount>")
        ->required();
    sim->add_option("--capacity", capacity, "entry capacity");
    sim->add_flag("--no-pin-first", no_pin, "disable first-frame pinning");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) return cmd_run(config_path, manifest_path, out_dir, format);
        if (*eval) return cmd_eval(pred_dir, gt_dir, tolerance);
        if (*verify) {
            stma::VerifyOptions opts;
            opts.seed = verify_seed;
            opts.fault = fault == "break-mask" ? stma::Fault::BreakMask : stma::Fault::None;
            return stma::run_verify(opts, std::cout);
        }
        if (*bench) return cmd_bench(bench_config, iters);
        if (*synth) return cmd_synth(synth_dir, synth_len, synth_targets, synth_seed, synth_format);
        if (*sim) return cmd_simulate_memory(trace_path, capacity, !no_pin);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
