#include <cmath>
#include <cstdlib>
#include <set>
#include <sstream>

#include "doctest.h"
#include "fusionnet/checkpoint.hpp"
#include "fusionnet/errors.hpp"
#include "fusionnet/gradcheck.hpp"
#include "fusionnet/grid.hpp"
#include "fusionnet/trainer.hpp"
#include "testutil.hpp"

using namespace fusionnet;
namespace fs = std::filesystem;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an error");
    return ErrorKind::io;
}

RunConfig tiny_config() {
    RunConfig c;
    c.input_size = 16;
    c.epochs = 3;
    c.batch_size = 8;
    c.set("augment_k", "1");
    c.set("seed", "5");
    return c;
}

/// One small synthetic dataset shared by every trainer test.
const fs::path& tiny_data() {
    static testutil::TempDir dir("harness_data");
    static bool made = false;
    if (!made) {
        synth_generate(dir.path(), 20, 16, 42);
        made = true;
    }
    return dir.path();
}

TrainResult train(const RunConfig& c, const fs::path& out, bool single = true) {
    TrainOptions o;
    o.data = tiny_data();
    o.out = out;
    o.single_thread = single;
    return cmd_train(c, o);
}

}  // namespace

TEST_CASE("config text round trip") {
    RunConfig c;
    c.set("architecture", "mobile");
    c.set("optimizer", "rmsprop");
    c.set("rho", "0.85");
    c.set("augment_k_all", "3");
    c.set("contrast", "0.9,1.1");
    c.set("split", "0.6,0.3,0.1");
    c.set("vgg_plan", "8x1,16x2");
    c.set("mobile_blocks", "8/1,8/2,16/1,16/2,32/1,32/1");
    c.set("seed", "123");
    c.set("normalization", "constant");
    const std::string text = to_text(c);
    const RunConfig back = parse_config(text);
    CHECK(to_text(back) == text);
    CHECK(back.architecture == Architecture::mobile);
    CHECK(back.optimizer.kind == OptimizerKind::rmsprop);
    CHECK(back.optimizer.lr == 1e-4);
    CHECK(back.optimizer.rho == 0.85);
    CHECK(back.augment.variants == std::array<std::size_t, 2>{7, 3});
    CHECK(back.vgg.stages.size() == 2);
    CHECK(back.mobile.blocks.size() == 6);
    CHECK(back.seed == 123);
    CHECK(parse_config("# comment only\n\nepochs = 4 # trailing\n").epochs == 4);
}

TEST_CASE("config defaults follow the training recipe") {
    const RunConfig c;
    CHECK(c.architecture == Architecture::hybrid);
    CHECK(c.epochs == 30);
    CHECK(c.batch_size == 32);
    CHECK(c.head.hidden_units == 256);
    CHECK(c.head.dropout == 0.4);
    CHECK(c.optimizer.kind == OptimizerKind::adam);
    CHECK(c.optimizer.lr == 1e-3);
    CHECK(c.augment.variants == std::array<std::size_t, 2>{7, 7});
    CHECK(c.split.train == 0.7);
    CHECK(c.element_width == 32);
    RunConfig long_run;
    long_run.set("epochs", "1000");
    CHECK_NOTHROW(long_run.validate());
}

TEST_CASE("config errors") {
    RunConfig c;
    CHECK(kind_of([&] { c.set("no_such_key", "1"); }) == ErrorKind::config);
    CHECK(kind_of([&] { c.set("epochs", "many"); }) == ErrorKind::config);
    CHECK(kind_of([&] { c.set("architecture", "resnet"); }) == ErrorKind::config);
    CHECK(kind_of([&] { parse_config("epochs 3\n"); }) == ErrorKind::config);
    RunConfig bad;
    bad.batch_size = 0;
    CHECK(kind_of([&] { bad.validate(); }) == ErrorKind::config);
    RunConfig width;
    width.element_width = 16;
    CHECK(kind_of([&] { width.validate(); }) == ErrorKind::config);
    CHECK(kind_of([] { load_config("/nonexistent/run.cfg"); }) == ErrorKind::config);
}

TEST_CASE("invalid config has no side effects") {
    testutil::TempDir dir("nosideeffects");
    RunConfig c = tiny_config();
    c.batch_size = 0;
    CHECK(kind_of([&] { train(c, dir / "out"); }) == ErrorKind::config);
    CHECK_FALSE(fs::exists(dir / "out"));
}

TEST_CASE("checkpoint round trip is bitwise") {
    testutil::TempDir dir("ckpt");
    const NetworkSpec spec = RunConfig{}.network_spec();
    Network<float> net = init_params<float>(spec, 3);
    Checkpoint<float> ck;
    ck.config_text = to_text(RunConfig{});
    ck.epoch = 4;
    ck.params = snapshot(net);
    ck.optimizer_kind = OptimizerKind::adam;
    Optimizer<float> opt(OptimizerConfig::defaults(OptimizerKind::adam));
    for (auto* p : net.parameters()) p->grad.fill(0.01f);
    opt.step(net.parameters());
    ck.optimizer = opt.state();
    Rng rng(9);
    rng.normal();
    ck.rng_state = rng.state();
    ck.log_text = "epoch,split\n";
    ck.best_epoch = 2;
    ck.best_val_hundredths = 9512;
    ck.best_val_loss = 0.123456789;
    ck.best_params = ck.params;
    save_checkpoint(dir / "a.ckpt", ck);
    CHECK(checkpoint_element_width(dir / "a.ckpt") == 32);
    const Checkpoint<float> back = load_checkpoint<float>(dir / "a.ckpt");
    REQUIRE(back.params.size() == ck.params.size());
    for (std::size_t i = 0; i < ck.params.size(); ++i) {
        CHECK(back.params[i].name == ck.params[i].name);
        CHECK(back.params[i].value == ck.params[i].value);
    }
    CHECK(back.optimizer.step == 1);
    for (std::size_t i = 0; i < ck.optimizer.first.size(); ++i) {
        CHECK(back.optimizer.first[i] == ck.optimizer.first[i]);
        CHECK(back.optimizer.second[i] == ck.optimizer.second[i]);
    }
    CHECK(back.rng_state == ck.rng_state);
    CHECK(back.config_text == ck.config_text);
    CHECK(back.best_epoch == 2);
    CHECK(back.best_val_hundredths == 9512);
    CHECK(back.best_val_loss == ck.best_val_loss);
    save_checkpoint(dir / "b.ckpt", back);
    CHECK(testutil::read_file(dir / "a.ckpt") == testutil::read_file(dir / "b.ckpt"));

    Network<float> other(spec);
    restore(other, back.params);
    const auto restored = snapshot(other);
    for (std::size_t i = 0; i < restored.size(); ++i) CHECK(restored[i].value == ck.params[i].value);
}

TEST_CASE("checkpoint format and truncation errors") {
    testutil::TempDir dir("ckpt_err");
    Checkpoint<double> ck;
    ck.config_text = "x";
    Network<double> net = init_params<double>(build_vgg_branch(VggPlan{{{2, 1}}}, {3, 8, 8}), 1);
    ck.params = snapshot(net);
    save_checkpoint(dir / "ok.ckpt", ck);
    const std::string bytes = testutil::read_file(dir / "ok.ckpt");

    testutil::write_file(dir / "magic.ckpt", "XXXX" + bytes.substr(4));
    CHECK(kind_of([&] { load_checkpoint<double>(dir / "magic.ckpt"); }) == ErrorKind::format);
    std::string version = bytes;
    version[4] = 9;
    testutil::write_file(dir / "version.ckpt", version);
    CHECK(kind_of([&] { load_checkpoint<double>(dir / "version.ckpt"); }) == ErrorKind::format);
    CHECK(kind_of([&] { load_checkpoint<float>(dir / "ok.ckpt"); }) == ErrorKind::format);
    for (std::size_t cut : {std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
        testutil::write_file(dir / "short.ckpt", bytes.substr(0, cut));
        CHECK(kind_of([&] { load_checkpoint<double>(dir / "short.ckpt"); }) == ErrorKind::io);
    }
    CHECK(kind_of([&] { load_checkpoint<double>(dir / "missing.ckpt"); }) == ErrorKind::io);

    Network<double> wrong = init_params<double>(build_vgg_branch(VggPlan{{{3, 1}}}, {3, 8, 8}), 1);
    CHECK(kind_of([&] { restore(wrong, ck.params); }) == ErrorKind::config);
}

TEST_CASE("prepared data keeps provenance and standardizes the train split") {
    const RunConfig c = tiny_config();
    const PreparedData d = prepare_data(c, tiny_data());
    CHECK(d.stats_before_augment);
    CHECK(d.originals == std::array<std::size_t, 3>{28, 8, 4});
    CHECK(d.train.size() == 28 * 2);
    CHECK(d.stats_ids.size() == 28);
    std::set<std::string> train_ids, base_ids;
    for (const auto& s : d.train) {
        train_ids.insert(s.id);
        base_ids.insert(s.id.substr(0, s.id.find('#')));
    }
    for (const auto* split : {&d.val, &d.test}) {
        for (const auto& s : *split) {
            CHECK(base_ids.count(s.id) == 0);
            CHECK(std::find(d.stats_ids.begin(), d.stats_ids.end(), s.id) == d.stats_ids.end());
        }
    }
    for (std::size_t ch = 0; ch < 3; ++ch) {
        double sum = 0, sq = 0, n = 0;
        for (const auto& sample : d.train) {
            if (sample.id.find('#') != std::string::npos) continue;
            const Image& img = sample.pixels;
            const std::size_t plane = img.size() / 3;
            for (std::size_t p = 0; p < plane; ++p) {
                const double v = img[ch * plane + p];
                sum += v;
                sq += v * v;
                n += 1;
            }
        }
        const double mean = sum / n;
        CHECK(std::fabs(mean) <= 1e-6);
        CHECK(std::fabs(std::sqrt(sq / n - mean * mean) - 1.0) <= 1e-6);
    }
}

TEST_CASE("zero epochs emit initial metrics only") {
    testutil::TempDir dir("epochs0");
    RunConfig c = tiny_config();
    c.epochs = 0;
    const TrainResult r = train(c, dir.path());
    CHECK(r.finished);
    CHECK(r.best_epoch == 0);
    std::istringstream lines(r.log);
    std::vector<std::string> rows;
    for (std::string line; std::getline(lines, line);) rows.push_back(line);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0] == kCsvHeader);
    CHECK(rows[1].rfind("0,val,", 0) == 0);
    CHECK(rows[2].rfind("0,test,", 0) == 0);
    const auto ck = load_checkpoint<float>(dir / "last.ckpt");
    CHECK(ck.optimizer.step == 0);
    const Network<float> init = init_params<float>(c.network_spec(), c.stream_seed(3));
    const auto fresh = snapshot(init);
    for (std::size_t i = 0; i < fresh.size(); ++i) CHECK(ck.params[i].value == fresh[i].value);
}

TEST_CASE("training is deterministic, resumable and matches eval") {
    testutil::TempDir dir("train");
    const RunConfig c = tiny_config();
    const TrainResult a = train(c, dir / "a");
    const TrainResult b = train(c, dir / "b");
    CHECK(a.log == b.log);
    CHECK(testutil::read_file(dir / "a/log.csv") == testutil::read_file(dir / "b/log.csv"));
    CHECK(testutil::read_file(dir / "a/log.csv") == a.log);

    const TrainResult threaded = train(c, dir / "c", false);
    CHECK(threaded.log == a.log);

    TrainOptions first;
    first.data = tiny_data();
    first.out = dir / "r";
    first.single_thread = true;
    first.stop_after = 1;
    const TrainResult partial = cmd_train(c, first);
    CHECK_FALSE(partial.finished);
    CHECK(partial.epochs_run == 1);
    TrainOptions second = first;
    second.stop_after.reset();
    second.resume = dir / "r/last.ckpt";
    const TrainResult resumed = cmd_train(c, second);
    CHECK(resumed.finished);
    CHECK(resumed.log == a.log);
    CHECK(testutil::read_file(dir / "r/log.csv") == testutil::read_file(dir / "a/log.csv"));
    CHECK(testutil::read_file(dir / "r/last.ckpt") == testutil::read_file(dir / "a/last.ckpt"));

    RunConfig changed = c;
    changed.set("lr", "0.01");
    TrainOptions mismatch = second;
    CHECK(kind_of([&] { cmd_train(changed, mismatch); }) == ErrorKind::config);

    const std::string last_row = a.log.substr(a.log.rfind('\n', a.log.size() - 2) + 1);
    const EvalResult e1 = cmd_eval(dir / "a/best.ckpt", tiny_data(), Split::test);
    const EvalResult e2 = cmd_eval(dir / "a/best.ckpt", tiny_data(), Split::test);
    CHECK(e1.row + "\n" == last_row);
    CHECK(e1.row == e2.row);
    const EvalResult on_train = cmd_eval(dir / "a/best.ckpt", tiny_data(), Split::train);
    CHECK(on_train.report.n == 28);
    CHECK_FALSE(on_train.row == e1.row);

    RunConfig other = c;
    other.architecture = Architecture::vgg;
    CHECK(kind_of([&] { cmd_eval(dir / "a/best.ckpt", tiny_data(), Split::test, &other); }) == ErrorKind::config);
}

TEST_CASE("training reduces the training loss") {
    testutil::TempDir dir("trend");
    RunConfig c = tiny_config();
    c.epochs = 8;
    c.set("augment_k", "0");
    const TrainResult r = train(c, dir.path());
    std::istringstream lines(r.log);
    std::vector<double> losses;
    for (std::string line; std::getline(lines, line);) {
        const auto comma = line.find(',');
        if (line.compare(comma + 1, 6, "train,") == 0) losses.push_back(std::stod(line.substr(comma + 7)));
    }
    REQUIRE(losses.size() == 8);
    CHECK(losses.back() < losses.front());
}

TEST_CASE("float64 training runs and checkpoints at width 64") {
    testutil::TempDir dir("train64");
    RunConfig c = tiny_config();
    c.epochs = 1;
    c.element_width = 64;
    train(c, dir.path());
    CHECK(checkpoint_element_width(dir / "last.ckpt") == 64);
    CHECK(cmd_eval(dir / "best.ckpt", tiny_data(), Split::val).report.n == 8);
}

TEST_CASE("gradcheck covers every layer and flags an injected fault") {
    const GradcheckReport ok = cmd_gradcheck();
    CHECK(ok.passed());
    CHECK(ok.items.size() >= 10);
    CHECK(ok.items.back().name == "hybrid_end_to_end");
    for (const auto& item : ok.items) CHECK(item.max_relative_error <= 1e-4);

    GradcheckOptions o;
    o.corrupt = "dense";
    const GradcheckReport bad = cmd_gradcheck(o);
    CHECK_FALSE(bad.passed());
    for (const auto& item : bad.items) CHECK(item.passed == (item.name != "dense"));
    CHECK(bad.format().find("dense") != std::string::npos);
}

TEST_CASE("grid isolates failing runs") {
    testutil::TempDir dir("grid");
    GridOptions o;
    o.data = tiny_data();
    o.out = dir.path();
    o.runner = [](const RunConfig& c, const TrainOptions&) {
        if (c.optimizer.kind == OptimizerKind::rmsprop && c.normalization == NormalizationMode::dataset) {
            throw Error(ErrorKind::numeric, "diverged");
        }
        TrainResult r;
        r.finished = true;
        const std::uint64_t bonus = c.optimizer.kind == OptimizerKind::sgd ? 1 : 0;
        r.best_val = make_report({5 + bonus, 4, 1 - bonus, 0}, 0.3);
        r.test = make_report({3, 4, 2, 1}, 0.4);
        return r;
    };
    const GridResult g = cmd_grid(o);
    REQUIRE(g.rows.size() == 9);
    std::size_t failed = 0;
    for (const auto& row : g.rows) failed += row.ok ? 0 : 1;
    CHECK(failed == 1);
    CHECK(g.rows[6].run.optimizer == OptimizerKind::sgd);
    CHECK(g.rows[6].run.normalization == NormalizationMode::constant);
    CHECK(g.rows[8].reused);
    CHECK(g.csv.find("hybrid,rmsprop,dataset,failed,,,,,") != std::string::npos);
    CHECK(g.csv.find("ablation,vgg,sgd,constant,ok,0.400000,70.00,75.00,66.67,10") != std::string::npos);
    CHECK(g.csv.find("# reference optimizer_normalization,hybrid,adam,dataset,accuracy=96.17") != std::string::npos);
    CHECK(testutil::read_file(dir / "grid.csv") == g.csv);
    CHECK(testutil::read_file(dir / "errors.txt").find("diverged") != std::string::npos);
}

TEST_CASE("cli exit codes") {
    testutil::TempDir dir("cli");
    const std::string cli = FUSIONNET_CLI_PATH;
    const auto run = [&](const std::string& args) {
        const int status = std::system((cli + " " + args + " > " + (dir / "out.txt").string() + " 2>&1").c_str());
        return WEXITSTATUS(status);
    };
    CHECK(run("--help") == 0);
    CHECK(run("frobnicate") == 1);
    CHECK(run("train --data " + tiny_data().string()) == 1);
    CHECK(run("train --data " + tiny_data().string() + " --out " + (dir / "t").string() + " --set batch_size=0") == 1);
    CHECK(run("train --data " + (dir / "missing").string() + " --out " + (dir / "t").string()) == 2);
    CHECK(run("gradcheck --corrupt dense") == 3);
    CHECK(run("synth --out " + (dir / "s").string() + " --per-class 3 --size 16 --seed 1") == 0);
    CHECK(load_dataset(dir / "s").samples.size() == 6);
    testutil::write_file(dir / "bad.ckpt", "XXXXjunk");
    CHECK(run("eval --ckpt " + (dir / "bad.ckpt").string() + " --data " + tiny_data().string()) == 1);
    CHECK(run("train --data " + tiny_data().string() + " --out " + (dir / "ok").string() +
              " --set input_size=16 --set batch_size=8 --set augment_k=0 --epochs 1 --single-thread") == 0);
    CHECK(run("eval --ckpt " + (dir / "ok/best.ckpt").string() + " --data " + tiny_data().string() +
              " --split val") == 0);
    CHECK(testutil::read_file(dir / "out.txt").find(",val,") != std::string::npos);
}
