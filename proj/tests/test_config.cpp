#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <functional>
#include <fstream>
#include <sstream>
#include <string>

#include "safebev/config.hpp"

using namespace safebev;

namespace {

std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

std::string without_auto_marker(std::string s) {
    for (std::size_t p; (p = s.find("  # auto")) != std::string::npos;) s.erase(p, 8);
    return s;
}

}  // namespace

TEST_CASE("defaults resolve") {
    RunConfig c;
    c.finalize();
    CHECK(c.safety.kappa == kappa_conservative(0.01, 0.01));
    CHECK(c.post().mode == PostMode::nmi);
    CHECK(c.post().iou_threshold == 0.1);
    CHECK(c.train.seed == c.seed);
    const std::string d = describe(c);
    CHECK(d.find("post.mode = nmi\n") != std::string::npos);
    CHECK(d.find("safety.kappa = ") != std::string::npos);
}

TEST_CASE("file syntax") {
    RunConfig c;
    std::istringstream is(
        "# demo\n"
        "seed = 42\n"
        "\n"
        "safety.delta2 = 0.1   # trailing comment\n"
        "safety.delta3=0.1\n"
        "post.mode = nmi-iterative\n"
        "post.iou_threshold = 0.2\n"
        "train.stage = harden-v2\n"
        "train.xi = 0.001\n"
        "train.negative_cell_regression = false\n"
        "net.header_channels = 32\n");
    apply_config(c, is, "demo.cfg");
    c.finalize();
    CHECK(c.seed == 42);
    CHECK(c.train.seed == 42);
    CHECK(c.safety.delta(2) == 0.1);
    CHECK(c.safety.kappa == kappa_conservative(0.1, 0.1));
    CHECK(c.post().mode == PostMode::nmi_iterative);
    CHECK(c.post().iou_threshold == 0.2);
    CHECK(c.train.stage == TrainStage::harden_v2);
    CHECK_FALSE(c.train.loss.negative_cell_regression);
    CHECK(c.net.header_channels == 32);

    apply_override(c, "safety.kappa=0.2");
    apply_override(c, "post.iou_threshold = auto");
    c.finalize();
    CHECK(c.safety.kappa == 0.2);
    CHECK(c.post().iou_threshold == 0.1);
}

TEST_CASE("errors name the offending key and line") {
    RunConfig c;
    CHECK(error_of([&] { apply_setting(c, "safety.delta9", "1"); }) == "unknown config key 'safety.delta9'");
    CHECK(error_of([&] { apply_setting(c, "train.epochs", "-3"); }).find("train.epochs") != std::string::npos);
    CHECK(error_of([&] { apply_setting(c, "grid.cell_size", "big"); }).find("grid.cell_size") != std::string::npos);
    CHECK(error_of([&] { apply_setting(c, "post.mode", "soft"); }).find("post.mode") != std::string::npos);
    CHECK(error_of([&] { apply_setting(c, "train.negative_cell_regression", "maybe"); }) != "");
    CHECK(error_of([&] { apply_override(c, "seed"); }).find("key=value") != std::string::npos);

    std::istringstream is("seed = 3\nbogus.key = 1\n");
    CHECK(error_of([&] { apply_config(c, is, "x.cfg"); }) == "x.cfg:2: unknown config key 'bogus.key'");
    std::istringstream no_eq("seed 3\n");
    CHECK(error_of([&] { apply_config(c, no_eq, "y.cfg"); }).rfind("y.cfg:1:", 0) == 0);
    CHECK(error_of([&] { apply_config_file(c, "/nonexistent/z.cfg"); }).find("z.cfg") != std::string::npos);
}

TEST_CASE("invalid combinations are rejected on finalize") {
    auto fails = [](const std::string& k, const std::string& v) {
        RunConfig c;
        apply_setting(c, k, v);
        return error_of([&] { c.finalize(); }).rfind("invalid configuration", 0) == 0;
    };
    CHECK(fails("safety.class_threshold", "1.5"));
    CHECK(fails("safety.gamma_w", "9"));
    CHECK(fails("grid.downscale", "3"));
    CHECK(fails("train.stage", "harden-v2"));  // xi still 0
    CHECK(fails("train.learning_rate", "0"));
    CHECK(fails("post.iou_threshold", "1"));
    CHECK(fails("post.nms_iou_threshold", "0"));
    CHECK(fails("net.backbone_channels", "0"));
    CHECK(fails("caps.max_width", "0"));
    CHECK(fails("safety.delta4", "-0.1"));
}

TEST_CASE("described configuration reads back to itself") {
    RunConfig c;
    apply_override(c, "safety.delta6=0.02");
    apply_override(c, "post.mode=nms");
    apply_override(c, "train.epochs=17");
    c.finalize();
    const std::string text = describe(c);

    const std::string path = "test_config_roundtrip.cfg";
    {
        std::ofstream os(path);
        os << text;
    }
    RunConfig back;
    apply_config_file(back, path);
    back.finalize();
    std::remove(path.c_str());
    CHECK(without_auto_marker(describe(back)) == without_auto_marker(text));
    CHECK(back.post().iou_threshold == 0.5);
    CHECK(back.train.epochs == 17);
}
