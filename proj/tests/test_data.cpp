#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "cinformer/checkpoint.hpp"
#include "cinformer/model.hpp"
#include "helpers.hpp"

using namespace cinformer;
using testutil::values;
using Tf = Tensor<float>;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cinformer_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("rng: splitmix64 reference stream and unit reals") {
  SeededRng r(0);
  CHECK(r.next_u64() == 0xE220A8397B1DCDAFull);
  CHECK(r.next_u64() == 0x6E789E6AA1B965F4ull);
  SeededRng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  SeededRng u(7);
  SeededRng raw(7);
  CHECK(u.uniform() == static_cast<double>(raw.next_u64() >> 11) * 0x1.0p-53);
  SeededRng n(9);
  double s = 0, s2 = 0;
  for (int i = 0; i < 20000; ++i) {
    const double x = n.normal();
    s += x;
    s2 += x * x;
  }
  CHECK(std::abs(s / 20000) < 0.03);
  CHECK(std::abs(s2 / 20000 - 1) < 0.05);
}

TEST_CASE("pgm: header byte count, round trip, malformed input") {
  const ByteImage one{1, 1, {0}};
  const auto bytes = encode_pgm(one);
  CHECK(std::string(bytes.begin(), bytes.end() - 1) == "P5\n1 1\n255\n");
  CHECK(bytes.size() == 11 + 1);
  SeededRng rng(1);
  ByteImage img{7, 5, std::vector<std::uint8_t>(35)};
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  const ByteImage back = decode_pgm(encode_pgm(img));
  CHECK(back.width == 7);
  CHECK(back.height == 5);
  CHECK(back.pixels == img.pixels);
  auto bad = [](const std::string& s) {
    return std::vector<std::uint8_t>(s.begin(), s.end());
  };
  CHECK_THROWS_AS(decode_pgm(bad("P5\n1 1\n65535\n\x01\x02")), FormatError);
  CHECK_THROWS_AS(decode_pgm(bad("P2\n1 1\n255\n\x01")), FormatError);
  CHECK_THROWS_AS(decode_pgm(bad("P5\n2 1\n255\n\x01")), FormatError);
  try {
    decode_pgm(bad("P5\n1 x\n255\n\x01"));
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }
}

TEST_CASE("dataset: byte-identical regeneration, value ranges, manifest layout") {
  SynthOptions o;
  o.count = 6;
  o.size = 32;
  o.seed = 5;
  const fs::path a = scratch_dir("gen_a"), b = scratch_dir("gen_b");
  CHECK(generate_dataset(a.string(), o) == (a / "manifest.json").string());
  generate_dataset(b.string(), o);
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), a);
    CHECK(slurp(entry.path()) == slurp(b / rel));
  }
  const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
  CHECK(manifest.at("size") == 32);
  CHECK(manifest.at("classes") == 4);
  CHECK(manifest.at("seed") == 5);
  const auto& train = manifest.at("splits").at("train");
  const auto& test = manifest.at("splits").at("test");
  CHECK(train.size() + test.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    const ByteImage mask = read_pgm((a / "masks" / (sample_id(i) + ".pgm")).string());
    const ByteImage img = read_pgm((a / "images" / (sample_id(i) + ".pgm")).string());
    CHECK(mask.width == 32);
    CHECK(img.height == 32);
    CHECK(std::all_of(mask.pixels.begin(), mask.pixels.end(), [](std::uint8_t v) { return v < 4; }));
    CHECK(std::count_if(mask.pixels.begin(), mask.pixels.end(), [](std::uint8_t v) { return v != 0; }) > 0);
  }
  const Dataset d = load_split(a.string(), "train");
  CHECK(d.count() == train.size());
  const Tf batch = batch_images(d, {0});
  CHECK(batch.shape() == Shape{1, 3, 32, 32});
  CHECK(batch[0] == batch[32 * 32]);
  CHECK(batch[0] == static_cast<float>(d.images[0].pixels[0]) / 255.0f);
  CHECK_THROWS_AS(load_split(a.string(), "validation"), DataError);
}

TEST_CASE("dataset: split is stratified by category at the configured fraction") {
  SynthOptions o;
  o.count = 40;
  o.size = 32;
  o.seed = 2;
  const fs::path dir = scratch_dir("split");
  generate_dataset(dir.string(), o);
  const auto m = nlohmann::json::parse(slurp(dir / "manifest.json"));
  std::map<int, int> total, in_train;
  std::set<std::string> train(m["splits"]["train"].begin(), m["splits"]["train"].end());
  for (std::size_t i = 0; i < 40; ++i) {
    const int cat = synthesize_sample(o, i).first_category;
    ++total[cat];
    if (train.count(sample_id(i))) ++in_train[cat];
  }
  for (const auto& [cat, n] : total) {
    CHECK(in_train[cat] == static_cast<int>(std::floor(0.7 * n + 0.5)));
  }
}

TEST_CASE("dataset: full-contrast defects stand out from the background") {
  SynthOptions o;
  o.size = 64;
  o.seed = 11;
  o.contrast = 1.0;
  int separated = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    const SynthSample s = synthesize_sample(o, i);
    double in = 0, out = 0;
    std::size_t nin = 0, nout = 0;
    for (std::size_t p = 0; p < s.image.pixels.size(); ++p) {
      if (s.mask.pixels[p] != 0) {
        in += s.image.pixels[p];
        ++nin;
      } else {
        out += s.image.pixels[p];
        ++nout;
      }
    }
    if (nin > 0 && std::abs(in / nin - out / nout) > 20) ++separated;
  }
  CHECK(separated >= 95);
}

TEST_CASE("dataset: argument and io errors") {
  SynthOptions o;
  o.size = 48;
  CHECK_THROWS_AS(generate_dataset(scratch_dir("bad").string(), o), UsageError);
  o.size = 32;
  o.count = 0;
  CHECK_THROWS_AS(generate_dataset(scratch_dir("bad").string(), o), UsageError);
  o.count = 2;
  const fs::path file = scratch_dir("blocked") / "file";
  std::ofstream(file) << "x";
  CHECK_THROWS_AS(generate_dataset((file / "sub").string(), o), IoError);
}

TEST_CASE("checkpoint: save-load-save is byte identical and restores every scalar") {
  Config c;
  c.model = micro_model_config();
  SeededRng rng(3);
  TrainingState st{c, init_model_params(c.model, rng), {}, 0.625f};
  st.optimizer = make_adamw_state(st.params);
  for (auto& [_, v] : st.optimizer.m)
    for (float& x : v) x = static_cast<float>(rng.uniform(-1, 1));
  for (auto& [_, v] : st.optimizer.v)
    for (float& x : v) x = static_cast<float>(rng.uniform(0, 1));
  st.optimizer.step = 17;
  const fs::path dir = scratch_dir("ckpt");
  save_checkpoint((dir / "a.ckpt").string(), st);
  const TrainingState back = load_checkpoint((dir / "a.ckpt").string());
  save_checkpoint((dir / "b.ckpt").string(), back);
  CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));
  CHECK(back.optimizer.step == 17);
  CHECK(back.best_miou == 0.625f);
  CHECK(back.optimizer.m == st.optimizer.m);
  CHECK(back.optimizer.v == st.optimizer.v);
  CHECK(to_json(back.config) == to_json(c));
  for (const auto& [path, e] : st.params) CHECK(values(back.params.get(path).detach()) == values(e.value.detach()));
  CHECK_FALSE(fs::exists(dir / "a.ckpt.tmp"));
  const std::string raw = slurp(dir / "a.ckpt");
  CHECK(raw.substr(0, 4) == "CINT");
}

TEST_CASE("checkpoint: corrupt inputs are rejected") {
  std::vector<CheckpointEntry> entries{{"w", {2}, EntryType::kF32, std::vector<std::uint8_t>(8, 0)}};
  const auto good = encode_checkpoint(entries);
  CHECK(decode_checkpoint(good).size() == 1);
  auto truncated = good;
  truncated.pop_back();
  CHECK_THROWS_AS(decode_checkpoint(truncated), FormatError);
  auto trailing = good;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(trailing), FormatError);
  auto magic = good;
  magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(magic), FormatError);
  auto version = good;
  version[4] = 99;
  CHECK_THROWS_AS(decode_checkpoint(version), FormatError);
  entries.push_back(entries.front());
  CHECK_THROWS_AS(decode_checkpoint(encode_checkpoint(entries)), FormatError);
  std::vector<CheckpointEntry> short_payload{{"w", {3}, EntryType::kF32, std::vector<std::uint8_t>(8, 0)}};
  CHECK_THROWS(decode_checkpoint(encode_checkpoint(short_payload)));
}

TEST_CASE("config: defaults, strict keys, round trip") {
  const Config d = config_from_json(nlohmann::json::object());
  CHECK(d.model.input_size == 64);
  CHECK(d.model.fpn_width == 32);
  CHECK(d.train.batch == 4);
  CHECK(d.train.lr == 7.5e-4);
  CHECK(d.train.weight_decay == 5e-3);
  CHECK(d.model.stage_widths == std::array<std::size_t, 4>{32, 64, 128, 256});
  try {
    config_from_json(nlohmann::json::parse(R"({"model": {"bogus": 1, "attention": {"k": 2}}, "extra": 0})"));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("model.bogus") != std::string::npos);
    CHECK(msg.find("model.attention.k") != std::string::npos);
    CHECK(msg.find("extra") != std::string::npos);
  }
  Config c;
  c.model.attention.topk_variant = TopKVariant::kSelectedKey;
  c.model.inject = false;
  c.train.seed = 99;
  CHECK(to_json(config_from_json(to_json(c))) == to_json(c));
  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"model": {"input_size": 40}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"train": {"lr": "fast"}})")), ConfigError);
}

TEST_CASE("training: repeat runs and resumed runs are bit-identical") {
  SynthOptions o;
  o.count = 4;
  o.size = 32;
  o.seed = 3;
  o.train_fraction = 1.0;
  const fs::path data = scratch_dir("train_data");
  generate_dataset(data.string(), o);
  Config c;
  c.model = micro_model_config();
  c.model.input_size = 32;
  c.model.num_classes = 4;
  c.train.batch = 2;
  c.train.steps = 6;
  c.train.eval_every = 3;
  c.data.dir = data.string();
  const Dataset train = load_split(data.string(), "train");
  const Dataset test = load_split(data.string(), "test");
  auto run = [&](const std::string& name, std::optional<std::size_t> stop, std::optional<std::string> resume) {
    TrainOptions opt;
    opt.out_dir = (fs::temp_directory_path() / ("cinformer_test_" + name)).string();
    if (!resume) fs::remove_all(opt.out_dir);
    opt.max_steps = stop;
    opt.resume = resume;
    return train_loop(c, train, test, opt);
  };
  run("run_a", std::nullopt, std::nullopt);
  run("run_b", std::nullopt, std::nullopt);
  run("run_c", 3, std::nullopt);
  const fs::path rc = fs::temp_directory_path() / "cinformer_test_run_c";
  const TrainResult r = run("run_c", std::nullopt, (rc / "last.ckpt").string());
  CHECK(r.steps == 6);
  const fs::path ra = fs::temp_directory_path() / "cinformer_test_run_a";
  const fs::path rb = fs::temp_directory_path() / "cinformer_test_run_b";
  for (const char* f : {"last.ckpt", "best.ckpt", "metrics.jsonl"}) {
    INFO(f);
    CHECK(slurp(ra / f) == slurp(rb / f));
    CHECK(slurp(ra / f) == slurp(rc / f));
  }
  std::ifstream metrics(ra / "metrics.jsonl");
  std::size_t lines = 0;
  for (std::string line; std::getline(metrics, line); ++lines) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("step") == lines + 1);
    CHECK(j.contains("lr"));
    CHECK(j.contains("loss"));
    CHECK(j.contains("miou") == ((lines + 1) % 3 == 0));
  }
  CHECK(lines == 6);
  // a different config cannot resume this run
  c.train.lr = 1e-3;
  CHECK_THROWS_AS(run("run_c", std::nullopt, (rc / "last.ckpt").string()), ConfigError);
}
