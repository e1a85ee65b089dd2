#include <cstdlib>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "test_support.hpp"
#include "yolortho/config.hpp"
#include "yolortho/error.hpp"

using namespace yolortho;
using namespace yolortho::config;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::Io;
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("defaults mirror the library defaults") {
    const RunConfig rc;
    const train::LossWeights lw = loss_weights(rc);
    CHECK(lw.w_bbox == 7.5);
    CHECK(lw.w_class == 0.5);
    CHECK(lw.w_dfl == 1.5);
    CHECK(lw.w_attr == 8.0);
    CHECK(model_config(rc) == nn::ModelConfig{});
    const auto pc = post_config(rc);
    CHECK(pc.iou_thr == 0.7);
    CHECK(pc.conf_thr == 0.25);
    CHECK(pc.cost == post::CostKind::OneMinusP);
    CHECK(pc.enumeration);
    CHECK(eval_config(rc).attr_threshold == 0.5);
    CHECK(train_config(rc).optimizer == train::OptimizerKind::Sgd);
    for (const auto& k : rc.keys()) CHECK_FALSE(rc.description(k).empty());
  }

  TEST_CASE("json merge accepts nested and dotted keys") {
    RunConfig a, b;
    a.merge_json(R"({"loss": {"w_bbox": 2}, "train": {"optimizer": "adam"}})");
    b.merge_json(R"({"loss.w_bbox": 2.0, "train.optimizer": "adam"})");
    CHECK(a.to_json() == b.to_json());
    CHECK(a.get_double("loss.w_bbox") == 2.0);
    CHECK(train_config(a).optimizer == train::OptimizerKind::Adam);
  }

  TEST_CASE("overrides parse by key type") {
    RunConfig rc;
    rc.apply_override("train.epochs=7");
    rc.apply_override("model.coordconv=false");
    rc.apply_override("augment.blur_sigmas=0,0.5,1.5");
    rc.apply_override("post.cost=neg_log");
    rc.set("train.lr", "0.125");
    CHECK(rc.get_int("train.epochs") == 7);
    CHECK_FALSE(rc.get_bool("model.coordconv"));
    CHECK(rc.get_list("augment.blur_sigmas") == std::vector<double>{0.0, 0.5, 1.5});
    CHECK(post_config(rc).cost == post::CostKind::NegLog);
    CHECK(train_config(rc).lr == 0.125);
    CHECK(train_config(rc).epochs == 7);
  }

  TEST_CASE("bad keys, types and choices are InvalidConfig") {
    RunConfig rc;
    CHECK(kind_of([&] { rc.apply_override("train.nope=1"); }) == ErrorKind::InvalidConfig);
    CHECK(kind_of([&] { rc.apply_override("train.epochs=abc"); }) == ErrorKind::InvalidConfig);
    CHECK(kind_of([&] { rc.apply_override("train.epochs"); }) == ErrorKind::InvalidConfig);
    CHECK(kind_of([&] { rc.apply_override("post.cost=cubic"); }) == ErrorKind::InvalidConfig);
    CHECK(kind_of([&] { rc.merge_json(R"({"model": {"coordconv": "yes"}})"); }) == ErrorKind::InvalidConfig);
    CHECK(kind_of([&] { rc.merge_json("[1, 2]"); }) == ErrorKind::InvalidConfig);
    CHECK(kind_of([&] { (void)rc.get_int("loss.w_bbox"); }) == ErrorKind::InvalidConfig);
  }

  TEST_CASE("file, environment and override layering") {
    testing::TempDir dir("config");
    std::ofstream(dir / "a.json") << R"({"train": {"epochs": 3, "lr": 0.5}})";
    std::ofstream(dir / "b.json") << R"({"train": {"epochs": 9}})";
    const std::vector<std::string> ov = {"train.lr=0.25"};
    RunConfig rc = load_run_config(dir / "a.json", ov);
    CHECK(rc.get_int("train.epochs") == 3);
    CHECK(rc.get_double("train.lr") == 0.25);

    ::setenv(kConfigEnvVar, (dir / "b.json").c_str(), 1);
    CHECK(load_run_config(std::nullopt).get_int("train.epochs") == 9);
    CHECK(load_run_config(dir / "a.json").get_int("train.epochs") == 3);
    ::unsetenv(kConfigEnvVar);
    CHECK(load_run_config(std::nullopt).get_int("train.epochs") == RunConfig().get_int("train.epochs"));

    CHECK_THROWS_AS(load_run_config(dir / "missing.json"), Error);
  }

  TEST_CASE("to_json round trips through merge") {
    RunConfig rc;
    rc.apply_override("model.width_mult=0.5");
    rc.apply_override("eval.diag_score=attribute");
    RunConfig back;
    back.merge_json(rc.to_json());
    CHECK(back.to_json() == rc.to_json());
    CHECK(eval_config(back).diag_score == eval::DiagScore::Attribute);
  }
}
