#include "doctest.h"
#include "marm/experiment_config.hpp"

using namespace marm;

TEST_CASE("empty object gives the defaults") {
    const auto c = parse_experiment_config("{}");
    CHECK(c.model.L == ModelConfig{}.L);
    CHECK(c.stream.num_events == SynthConfig{}.num_events);
    CHECK(c.grid.n == SweepGrid{}.n);
    CHECK(c.downsample.keep_fraction == 0.5);
}

TEST_CASE("dump then parse is the identity on the dump") {
    ExperimentConfig c;
    c.model.L = 3;
    c.model.learning_rate = 0.1 + 1e-17;
    c.model.optimizer = Optimizer::sgd;
    c.model.mode = EngineMode::cascading;
    c.model.filter = SequenceFilter::long_view_only;
    c.stream.num_clusters = 2;
    c.stream.transition = {{0.9, 0.1}, {0.3, 0.7}};
    c.stream.unique_items_per_user = true;
    c.grid.seeds = {4, 5};
    c.downsample.keep_fraction = 0.3;
    const auto text = dump_experiment_config(c);
    const auto back = parse_experiment_config(text);
    CHECK(dump_experiment_config(back) == text);
    CHECK(back.model.optimizer == Optimizer::sgd);
    CHECK(back.model.learning_rate == c.model.learning_rate);
    CHECK(back.stream.transition == c.stream.transition);
    CHECK(back.grid.seeds == std::vector<std::uint64_t>{4, 5});
}

TEST_CASE("errors name the offending key") {
    auto message = [](const std::string& json) {
        try {
            parse_experiment_config(json);
        } catch (const ConfigError& e) {
            return std::string(e.what());
        }
        return std::string("no error");
    };
    CHECK(message(R"({"model": {"depth": 2}})").find("config.model.depth: unknown key") == 0);
    CHECK(message(R"({"extra": 1})").find("config.extra") == 0);
    CHECK(message(R"({"model": {"L": -1}})").find("config.model.L") == 0);
    CHECK(message(R"({"model": {"L": 1.5}})").find("config.model.L") == 0);
    CHECK(message(R"({"model": {"learning_rate": "fast"}})").find("config.model.learning_rate") == 0);
    CHECK(message(R"({"model": {"optimizer": "adam"}})").find("config.model.optimizer") == 0);
    CHECK(message(R"({"grid": {"n": [25, "x"]}})").find("config.grid.n[1]") == 0);
    CHECK(message(R"({"stream": {"unique_items_per_user": 1}})").find("config.stream.unique_items_per_user") == 0);
    CHECK(message(R"({"model": {"d": 0}})").find("model:") == 0);
    CHECK(message(R"({"grid": {"seeds": []}})").find("grid:") == 0);
    CHECK(message(R"({"downsample": {"keep_fraction": 0}})").find("downsample.keep_fraction") == 0);
    CHECK(message("[1, 2]").find("config: expected an object") == 0);
    CHECK(message("{").find("invalid JSON") == 0);
}
