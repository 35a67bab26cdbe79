#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <functional>
#include <sstream>

#include "globediff/checkpoint.hpp"
#include "globediff/config.hpp"
#include "globediff/dataset.hpp"
#include "globediff/synth.hpp"

using namespace globediff;

namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

GlobeDiffModel small_model() {
  ModelSpec spec;
  spec.dims = {2, 3, 4};
  spec.schedule = ScheduleSpec{ScheduleKind::cosine, 7, 1e-4, 0.02};
  spec.denoiser_hidden = {8, 8};
  spec.head_hidden = {5};
  spec.beta_kl = 0.25;
  spec.seed = 11;
  GlobeDiffModel m = make_model(spec);
  m.delta_sq_hat = 0.125;
  m.eps_kl_hat = 0.5;
  return m;
}

}  // namespace

TEST(Config, DefaultsRoundTrip) {
  const RunConfig defaults;
  EXPECT_EQ(parse_config_string(serialize_config(defaults)), defaults);
  EXPECT_EQ(parse_config_string(""), defaults);
}

TEST(Config, NonDefaultRoundTrip) {
  RunConfig c;
  c.seed = 123456789012345ULL;
  c.task_kind = "grid";
  c.grid.aux = AuxMode::joint;
  c.grid.sight = 2;
  c.schedule = {ScheduleKind::cosine, 9, 1e-3, 0.05};
  c.denoiser_hidden = {7, 9};
  c.train.lr = 1.0 / 3.0;
  c.eval_x = {0.1, -0.2};
  EXPECT_EQ(parse_config_string(serialize_config(c)), c);
}

TEST(Config, DefaultsMatchDocumentedValues) {
  const RunConfig c;
  EXPECT_EQ(c.task_kind, "bimodal");
  EXPECT_EQ(c.task_c, 2.0);
  EXPECT_EQ(c.task_sigma, 0.1);
  EXPECT_EQ(c.schedule.num_steps, 5);
  EXPECT_EQ(c.latent_dim, 16u);
  EXPECT_EQ(c.train.lr, 2e-4);
  EXPECT_EQ(c.train.batch_size, 32u);
  EXPECT_EQ(c.train.weight_decay, 1e-4);
  EXPECT_EQ(c.grid.history, 3);
}

TEST(Config, CommentsAndWhitespace) {
  const RunConfig c = parse_config_string("# header\n\n  task.c = 3   # trailing\nschedule.kind=cosine\n");
  EXPECT_EQ(c.task_c, 3.0);
  EXPECT_EQ(c.schedule.kind, ScheduleKind::cosine);
}

TEST(Config, ErrorsNameKeyAndLine) {
  EXPECT_NE(error_of([] { parse_config_string("seed = 1\nmodel.width = 3\n"); }).find(":2: unknown key 'model.width'"),
            std::string::npos);
  EXPECT_NE(error_of([] { parse_config_string("seed = 1\nseed = 2\n"); }).find("duplicate key 'seed'"), std::string::npos);
  EXPECT_NE(error_of([] { parse_config_string("task.c =\n"); }).find(":1: missing value"), std::string::npos);
  EXPECT_NE(error_of([] { parse_config_string("task.c\n"); }).find(":1:"), std::string::npos);
  EXPECT_NE(error_of([] { parse_config_string("\ntask.c = two\n"); }).find(":2:"), std::string::npos);
  EXPECT_THROW(parse_config_string("schedule.beta_lo = 0\n"), FormatError);
  EXPECT_THROW(parse_config_string("task.kind = trimodal\n"), FormatError);
  EXPECT_THROW(parse_config_string("grid.aux = both\n"), FormatError);
}

TEST(Dataset, RoundTripIsExact) {
  const Dataset d = generate_dataset(GmmSource{make_bimodal_task(2.0, 0.1, 2)}, 30, 3);
  std::stringstream ss;
  write_dataset(d, ss);
  const Dataset back = read_dataset(ss);
  EXPECT_EQ(back.x, d.x);
  EXPECT_EQ(back.s, d.s);
  EXPECT_EQ(back.meta["task"], "bimodal");
  EXPECT_EQ(back.meta["c"], 2.0);
  EXPECT_EQ(back.meta["sigma"], 0.1);
  EXPECT_EQ(back.meta["n"], 30);
}

TEST(Dataset, MalformedInputsReportLine) {
  auto read = [](const std::string& text) {
    std::istringstream in(text);
    return read_dataset(in, "d");
  };
  EXPECT_THROW(read(""), FormatError);
  EXPECT_NE(error_of([&] { read("{\"d\":1,\"d_x\":1,\"n\":1}\n{\"x\":[1]}\n"); }).find("d:2"), std::string::npos);
  EXPECT_NE(error_of([&] { read("{\"d\":1,\"d_x\":1,\"n\":2}\n{\"x\":[1],\"s\":[2]}\n"); }).find("n=2"), std::string::npos);
  EXPECT_NE(error_of([&] { read("{\"d\":1,\"d_x\":1,\"n\":1}\n{\"x\":[1,2],\"s\":[2]}\n"); }).find("d:2"),
            std::string::npos);
  EXPECT_THROW(read("{\"d_x\":1,\"n\":1}\n"), FormatError);
}

TEST(Checkpoint, RoundTripPreservesEverything) {
  const GlobeDiffModel m = small_model();
  const std::string bytes = serialize_model(m);
  const GlobeDiffModel back = deserialize_model(bytes);
  EXPECT_EQ(back.dims, m.dims);
  EXPECT_EQ(back.sched.spec(), m.sched.spec());
  EXPECT_EQ(back.sched.betas(), m.sched.betas());
  EXPECT_EQ(back.denoiser, m.denoiser);
  EXPECT_EQ(back.prior, m.prior);
  EXPECT_EQ(back.posterior, m.posterior);
  EXPECT_EQ(back.beta_kl, 0.25);
  EXPECT_EQ(back.delta_sq_hat, 0.125);
  EXPECT_EQ(back.eps_kl_hat, 0.5);
  EXPECT_EQ(serialize_model(back), bytes);
}

TEST(Checkpoint, HeaderLayout) {
  const std::string bytes = serialize_model(small_model());
  EXPECT_EQ(bytes.substr(0, 8), "GLBDIFF1");
  std::uint32_t version = 0;
  std::memcpy(&version, bytes.data() + 8, 4);
  EXPECT_EQ(version, kCheckpointVersion);
}

TEST(Checkpoint, CorruptionIsDetected) {
  const std::string good = serialize_model(small_model());
  std::string flipped = good;
  flipped[good.size() / 2] ^= 0x01;
  EXPECT_THROW(deserialize_model(flipped), FormatError);
  EXPECT_THROW(deserialize_model(good.substr(0, good.size() - 3)), FormatError);
  std::string magic = good;
  magic[0] = 'X';
  EXPECT_THROW(deserialize_model(magic), FormatError);
  std::string version = good;
  version[8] = 9;
  // Re-seal so the version check, not the checksum, is what fails.
  const std::uint64_t sum = fnv1a64(std::string_view(version).substr(0, version.size() - 8));
  std::memcpy(version.data() + version.size() - 8, &sum, 8);
  EXPECT_NE(error_of([&] { deserialize_model(version); }).find("version"), std::string::npos);
  EXPECT_THROW(deserialize_model(""), FormatError);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "globediff_io_test.ckpt";
  const GlobeDiffModel m = small_model();
  save_checkpoint(m, path.string());
  EXPECT_EQ(load_checkpoint(path.string()).denoiser, m.denoiser);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path.string()), std::exception);
}
