#include <cinttypes>
#include <cstdio>
#include <exception>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mmk/bench.hpp"
#include "mmk/checks.hpp"
#include "mmk/fixtures.hpp"
#include "mmk/harness.hpp"
#include "mmk/weight_store.hpp"

namespace {

int run_check(const std::string& filter) {
    std::vector<mmk::checks::CheckResult> results;
    try {
        results = mmk::checks::run_invariant_suite(filter);
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    int failed = 0;
    for (const auto& r : results) {
        if (!r.pass) ++failed;
        std::printf("[%s] %-34s measured=%-12.5g tolerance=%-12.5g %s\n", r.pass ? "PASS" : "FAIL",
                    r.name.c_str(), r.measured, r.tolerance, r.detail.c_str());
    }
    std::printf("%zu/%zu invariants hold\n", results.size() - static_cast<std::size_t>(failed),
                results.size());
    return failed == 0 ? 0 : 1;
}

int run_bench(const std::string& op, const std::vector<std::int64_t>& lengths, std::int64_t channels,
              int repeats) {
    const auto rows = mmk::bench::run(op, lengths, channels, repeats);
    for (const auto& row : rows) std::printf("%s\n", mmk::bench::format_row(row).c_str());
    return 0;
}

std::int64_t parse_size(const std::string& text) {
    const auto x = text.find('x');
    if (x != std::string::npos) {
        const std::int64_t h = std::stoll(text.substr(0, x));
        const std::int64_t w = std::stoll(text.substr(x + 1));
        if (h != w) throw std::invalid_argument("forward: only square inputs are supported, got " + text);
        return h;
    }
    return std::stoll(text);
}

int run_forward(const std::string& size_text, std::uint64_t seed, const std::string& weights_path,
                const std::string& save_path, bool dump) {
    const std::int64_t size = parse_size(size_text);
    mmk::HarnessConfig cfg;
    mmk::EncoderModel model = [&] {
        if (weights_path.empty()) return mmk::make_default_model(cfg);
        try {
            return mmk::bind_model(mmk::load_weights(weights_path), cfg);
        } catch (const std::exception& e) {
            // an unreadable or malformed weight file is an input problem, not
            // a computation failure
            throw std::invalid_argument(std::string("weights: ") + e.what());
        }
    }();
    if (!save_path.empty()) {
        mmk::save_weights(mmk::store_from_model(model), save_path);
        std::printf("saved %zu weight tensors to %s\n", mmk::store_from_model(model).size(),
                    save_path.c_str());
    }
    const mmk::ModalityPair in = mmk::synth_pair(seed, size);
    const mmk::PyramidFeatures py = mmk::encoder_forward(in.rgb, in.ir, model);

    const std::pair<const char*, const mmk::Tensor*> levels[3] = {
        {"p3", &py.p3}, {"n4", &py.n4}, {"n5", &py.n5}};
    for (const auto& [name, t] : levels) {
        std::printf("%s\n", mmk::format_stats(mmk::tensor_stats(name, *t)).c_str());
    }
    if (dump) {
        for (const auto& [name, t] : levels) {
            const auto values = t->data();
            for (std::size_t i = 0; i < values.size(); ++i) {
                std::printf("%s[%zu] %.17g\n", name, i, values[i]);
            }
        }
    }
    return 0;
}

int run_fixtures(const std::string& mode, const std::string& dir, double tol) {
    if (mode == "generate") {
        mmk::fixtures::generate_cases(dir);
        std::printf("wrote %zu fixture cases to %s\n", mmk::fixtures::compute_cases().size(), dir.c_str());
        return 0;
    }
    const auto reports = mmk::fixtures::verify_cases(dir, tol);
    int failed = 0;
    for (const auto& r : reports) {
        if (!r.pass) ++failed;
        std::printf("[%s] %-16s %s\n", r.pass ? "PASS" : "FAIL", r.case_name.c_str(), r.detail.c_str());
    }
    std::printf("%zu/%zu fixture cases match\n", reports.size() - static_cast<std::size_t>(failed),
                reports.size());
    return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"workbench for the selective-scan multimodal fusion kernels"};
    app.require_subcommand(1);

    auto* check = app.add_subcommand("check", "run the invariant suite");
    std::string filter;
    check->add_option("--filter", filter, "only run checks whose name contains this substring");

    auto* bench = app.add_subcommand("bench", "time the linear scan against quadratic attention");
    std::string op = "both";
    std::vector<std::int64_t> lengths{512, 1024, 2048, 4096};
    std::int64_t channels = 32;
    int repeats = 7;
    bench->add_option("--op", op, "ss1d, attn or both")->default_str("both");
    bench->add_option("--lengths", lengths, "comma-separated sequence lengths")->delimiter(',');
    bench->add_option("--channels", channels, "feature width");
    bench->add_option("--repeats", repeats, "timed repetitions per point");

    auto* forward = app.add_subcommand("forward", "run the encoder on synthetic aligned inputs");
    std::string size_text = "256";
    std::uint64_t seed = 7;
    std::string weights_path, save_path;
    bool dump = false;
    forward->add_option("--size", size_text, "input size (multiple of 32; S or SxS)");
    forward->add_option("--seed", seed, "seed of the synthetic input pair");
    forward->add_option("--weights", weights_path, "load model weights from this file");
    forward->add_option("--save-weights", save_path, "write the model weights to this file");
    forward->add_flag("--dump", dump, "print every output value after the summary lines");

    auto* fixtures = app.add_subcommand("fixtures", "generate or verify golden fixture files");
    std::string mode;
    std::string dir;
    double tol = 0.0;
    fixtures->add_option("mode", mode, "generate or verify")
        ->required()
        ->check(CLI::IsMember({"generate", "verify"}));
    fixtures->add_option("--dir", dir, "fixture directory")->required();
    fixtures->add_option("--tol", tol, "relative tolerance for verify (0 = bitwise)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*check) return run_check(filter);
        if (*bench) return run_bench(op, lengths, channels, repeats);
        if (*forward) return run_forward(size_text, seed, weights_path, save_path, dump);
        if (*fixtures) return run_fixtures(mode, dir, tol);
    } catch (const std::invalid_argument& e) {
        // bad argument values and unusable input files
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        // the requested computation started but could not finish
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
