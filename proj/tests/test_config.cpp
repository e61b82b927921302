#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <string>
#include <vector>

#include "cnds/config.hpp"
#include "cnds/errors.hpp"
#include "cnds/network.hpp"

using namespace cnds;

namespace {

const char* kFullConfig = R"(# full example, every section
[network]
conv c1 out=4 k=3 s=1 p=1 relu
pool p1 w=2 s=2
conv c2 out=8 k=3 s=2 p=0 relu
linear f1 out=32 relu
linear f2 out=10
softmax head classes=10

[branches]
attach=c1 conv_out=2 conv_k=1 fc=16,10 alpha0=0.3
attach=c2 conv_out=4 fc=10

[train]
epochs=12
batch_size=64
lr=0.05
momentum=0.9
weight_decay=0.0005
seed=7
alpha0=0.3
snapshot_every=4
lr_drop=8:0.1,10:0.5

[data]
source=synthetic
seed=3
count=500
val_count=100
classes=10
height=12
width=12
channels=1
difficulty=0.25

[meta]
epoch=11
alpha=0.025
seed=7
)";

int error_line(const std::string& text) {
    try {
        parse_config_text(text);
    } catch (const ConfigError& e) {
        return e.line();
    }
    FAIL("expected a ConfigError");
    return -1;
}

} // namespace

TEST_CASE("parse: full config lands in every field") {
    const RunConfig cfg = parse_config_text(kFullConfig);
    CHECK(cfg.has_network);
    CHECK(cfg.has_train);
    CHECK(cfg.has_data);
    CHECK(cfg.has_meta);

    REQUIRE(cfg.spec.main_path.size() == 6);
    CHECK(cfg.spec.main_path[0].kind == BlockKind::Conv);
    CHECK(cfg.spec.main_path[0].out_channels == 4);
    CHECK(cfg.spec.main_path[0].relu);
    CHECK(cfg.spec.main_path[1].kind == BlockKind::Maxpool);
    CHECK(cfg.spec.main_path[1].window == 2);
    CHECK(cfg.spec.main_path[2].stride == 2);
    CHECK_FALSE(cfg.spec.main_path[4].relu);
    CHECK(cfg.spec.main_path[5].classes == 10);

    REQUIRE(cfg.spec.branches.size() == 2);
    CHECK(cfg.spec.branches[0].attach_after == "c1");
    REQUIRE(cfg.spec.branches[0].blocks.size() == 4); // conv, fc1, fc2, head
    CHECK(cfg.spec.branches[0].blocks[3].classes == 10);
    CHECK(cfg.spec.branches[1].attach_after == "c2");
    REQUIRE(cfg.spec.branches[1].blocks.size() == 3); // conv, fc1, head
    CHECK(cfg.spec.branches[1].alpha0 == 0.3);        // default alpha0

    CHECK(cfg.train.epochs == 12);
    CHECK(cfg.train.batch_size == 64);
    CHECK(cfg.train.learning_rate == 0.05);
    CHECK(cfg.train.momentum == 0.9);
    CHECK(cfg.train.weight_decay == 0.0005);
    CHECK(cfg.train.seed == 7);
    CHECK(cfg.train.snapshot_every == 4);
    CHECK_FALSE(cfg.train.use_default_lr_schedule);
    REQUIRE(cfg.train.lr_schedule.size() == 2);
    CHECK(cfg.train.lr_schedule[0] == std::pair<int, real>{8, 0.1});
    CHECK(cfg.train.lr_schedule[1] == std::pair<int, real>{10, 0.5});

    CHECK(cfg.data.source == DataConfig::Source::Synthetic);
    CHECK(cfg.data.count == 500);
    CHECK(cfg.data.difficulty == 0.25);

    CHECK(cfg.meta.epoch == 11);
    CHECK(cfg.meta.alpha == 0.025);
    CHECK(cfg.meta.seed == 7);
}

TEST_CASE("round-trip: parse(print(parse(x))) == parse(x)") {
    const RunConfig first = parse_config_text(kFullConfig);
    const std::string printed = print_config(first);
    const RunConfig second = parse_config_text(printed);
    CHECK(print_config(second) == printed);

    // Printing is canonical: defaults that were omitted stay omitted.
    CHECK(printed.find("snapshot_every=4") != std::string::npos);
    CHECK(printed.find("lr_drop=8:0.1,10:0.5") != std::string::npos);
}

TEST_CASE("round-trip: minimal network-only config") {
    const char* minimal = "[network]\nlinear f out=2\nsoftmax h classes=2\n";
    const RunConfig cfg = parse_config_text(minimal);
    CHECK(cfg.has_network);
    CHECK_FALSE(cfg.has_train);
    const std::string printed = print_config(cfg);
    CHECK(printed.find("[train]") == std::string::npos);
    CHECK(printed.find("[data]") == std::string::npos);
    CHECK(print_config(parse_config_text(printed)) == printed);
}

TEST_CASE("round-trip: default lr schedule stays implicit, explicit none survives") {
    const char* with_default = "[train]\nepochs=9\n";
    const std::string p1 = print_config(parse_config_text(with_default));
    CHECK(p1.find("lr_drop") == std::string::npos);
    CHECK(parse_config_text(p1).train.use_default_lr_schedule);

    const char* with_none = "[train]\nepochs=9\nlr_drop=none\n";
    const std::string p2 = print_config(parse_config_text(with_none));
    CHECK(p2.find("lr_drop=none") != std::string::npos);
    const RunConfig back = parse_config_text(p2);
    CHECK_FALSE(back.train.use_default_lr_schedule);
    CHECK(back.train.lr_schedule.empty());
}

TEST_CASE("round-trip: real values print at full precision") {
    // 0.1 + 0.2 is the canonical shortest-representation stress value.
    const std::string text =
        "[train]\nlr=0.30000000000000004\nmomentum=0.1\nweight_decay=0\n";
    const RunConfig cfg = parse_config_text(text);
    CHECK(cfg.train.learning_rate == 0.1 + 0.2);
    const std::string printed = print_config(cfg);
    const RunConfig back = parse_config_text(printed);
    CHECK(back.train.learning_rate == 0.1 + 0.2);
    CHECK(back.train.momentum == 0.1);
}

TEST_CASE("parse: IDX data section requires all four paths") {
    const char* good = "[data]\nsource=idx\ntrain_images=a\ntrain_labels=b\n"
                       "val_images=c\nval_labels=d\n";
    const RunConfig cfg = parse_config_text(good);
    CHECK(cfg.data.source == DataConfig::Source::Idx);
    CHECK(cfg.data.train_images == "a");
    const std::string printed = print_config(cfg);
    CHECK(print_config(parse_config_text(printed)) == printed);

    CHECK_THROWS_WITH_AS(
        parse_config_text("[data]\nsource=idx\ntrain_images=a\ntrain_labels=b\n"
                          "val_images=c\n"),
        doctest::Contains("val_labels"), ConfigError);
}

TEST_CASE("parse: line numbers point at the offending line") {
    // Line 3 holds the bad key.
    CHECK(error_line("[network]\nconv c1 out=4 k=3\nconv c2 out=oops k=3\n"
                     "softmax h classes=4\n") == 3);
    // Duplicate key on line 2.
    CHECK(error_line("[train]\nepochs=2 epochs=3\n") == 2);
    // Unknown section name on line 1.
    CHECK(error_line("[nope]\n") == 1);
    // Content before any section header.
    CHECK(error_line("epochs=2\n[train]\n") == 1);
    // Duplicate section on line 4.
    CHECK(error_line("[train]\nepochs=2\nseed=1\n[train]\n") == 4);
    // Unknown key on line 2.
    CHECK(error_line("[train]\nwarmup=5\n") == 2);
    // Missing value.
    CHECK(error_line("[train]\nepochs=\n") == 2);
    // source must come first in [data].
    CHECK(error_line("[data]\ncount=100\nsource=synthetic\n") == 2);
    // Malformed lr_drop entry.
    CHECK(error_line("[train]\nlr_drop=5\n") == 2);
    // Branch before network.
    const int line = error_line("[branches]\nattach=c1 conv_out=2\n");
    CHECK(line == 0); // section-level complaint, no single line at fault

    // Messages carry the line prefix for the user.
    try {
        parse_config_text("[train]\nwarmup=5\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
        CHECK(std::string(e.what()).find("warmup") != std::string::npos);
    }
}

TEST_CASE("parse: network grammar errors") {
    CHECK_THROWS_WITH_AS(
        parse_config_text("[network]\nconv out=4 k=3\nsoftmax h classes=4\n"),
        doctest::Contains("name"), ConfigError);
    CHECK_THROWS_WITH_AS(
        parse_config_text("[network]\ndense f out=4\nsoftmax h classes=4\n"),
        doctest::Contains("unknown block kind"), ConfigError);
    CHECK_THROWS_WITH_AS(
        parse_config_text("[network]\nconv c1 out=4 k=3 pad=1\nsoftmax h classes=4\n"),
        doctest::Contains("unknown key"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("[network]\nconv c1 out=4\nsoftmax h classes=4\n"),
                         doctest::Contains("missing key 'k'"), ConfigError);
    CHECK_THROWS_WITH_AS(
        parse_config_text("[network]\nconv c1 out=0 k=3\nsoftmax h classes=4\n"),
        doctest::Contains("out"), ConfigError);
    CHECK_THROWS_WITH_AS(
        parse_config_text("[network]\npool p1 w=2 s=2 relu\nsoftmax h classes=4\n"),
        doctest::Contains("relu"), ConfigError);
}

TEST_CASE("parse: branch lines resolve against the main head class count") {
    const char* text = "[network]\nconv c1 out=4 k=3 s=1 p=1\nlinear f out=6\n"
                       "softmax h classes=6\n[branches]\nattach=c1 conv_out=2\n";
    const RunConfig cfg = parse_config_text(text);
    REQUIRE(cfg.spec.branches.size() == 1);
    // No fc list: the branch conv feeds the head directly, so the branch
    // conv output must flatten to the class count... which it does not here;
    // attach_branch validates at build time inside parse.
    // (This parse succeeded because validation happens on attach, shape
    // checking happens in Network::build.)
    CHECK(cfg.spec.branches[0].blocks.size() == 2);

    // Unknown attach point is a config error carrying the branch line number.
    const char* bad = "[network]\nconv c1 out=4 k=3\nlinear f out=6\nsoftmax h classes=6\n"
                      "[branches]\nattach=zz conv_out=2\n";
    try {
        parse_config_text(bad);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.line() == 6);
    }
}

TEST_CASE("parse: comments, blank lines, and CRLF endings") {
    const std::string text = "# leading comment\r\n\r\n[train]\r\nepochs=3\r\n# done\r\n";
    const RunConfig cfg = parse_config_text(text);
    CHECK(cfg.train.epochs == 3);
}

TEST_CASE("parse: value validation ranges") {
    CHECK_THROWS_AS(parse_config_text("[train]\nmomentum=1.0\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("[train]\nmomentum=-0.1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("[train]\nlr=0\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("[train]\nweight_decay=-1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("[train]\nepochs=-1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("[train]\nbatch_size=0\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("[train]\nalpha0=-0.5\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("[train]\nlr_drop=2:0\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("[data]\nsource=csv\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("[data]\nsource=synthetic\ncount=5\nclasses=10\n"),
                    ConfigError);
    CHECK(parse_config_text("[train]\nepochs=0\n").train.epochs == 0); // N=0 allowed
}

TEST_CASE("load_datasets: synthetic split varies the seed between train and val") {
    DataConfig dc;
    dc.source = DataConfig::Source::Synthetic;
    dc.seed = 5;
    dc.count = 40;
    dc.val_count = 20;
    dc.classes = 4;
    dc.height = 6;
    dc.width = 6;
    dc.channels = 1;
    dc.difficulty = 0.3;

    const auto [train_ds, val_ds] = load_datasets(dc);
    CHECK(train_ds.count() == 40);
    CHECK(val_ds.count() == 20);
    CHECK(train_ds.num_classes == 4);
    CHECK(val_ds.num_classes == 4);
    CHECK(train_ds.example_shape() == std::vector<int>{1, 6, 6});

    // Validation set must not repeat training images.
    const Dataset train_again = synthetic_dataset(5, 40, {1, 6, 6}, 4, 0.3);
    CHECK(train_ds.images.raw() == train_again.images.raw());
    const Dataset val_again = synthetic_dataset(6, 20, {1, 6, 6}, 4, 0.3);
    CHECK(val_ds.images.raw() == val_again.images.raw());
}

TEST_CASE("print_config rejects branches outside the template shape") {
    RunConfig cfg = parse_config_text(kFullConfig);
    // Hand-build a branch whose first block is a pool: not expressible.
    BranchSpec odd;
    odd.attach_after = "c2";
    odd.blocks = {BlockSpec::maxpool("odd_pool", 2, 2),
                  BlockSpec::softmax_head("odd_head", 10)};
    cfg.spec.branches.clear();
    cfg.spec.branches.push_back(odd);
    CHECK_THROWS_AS(print_config(cfg), std::invalid_argument);
}
