#include <doctest.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "ddrnn/commands.hpp"
#include "ddrnn/data.hpp"
#include "ddrnn/model_io.hpp"
#include "ddrnn/tensor_io.hpp"
#include "ddrnn/training.hpp"
#include "support.hpp"

using namespace ddrnn;
using testing::TempDir;
using testing::run;

namespace {

namespace fs = std::filesystem;

std::size_t count_files(const fs::path& dir) {
  return static_cast<std::size_t>(std::distance(fs::directory_iterator(dir), fs::directory_iterator()));
}

std::string read(const fs::path& path) {
  const auto bytes = testing::file_bytes(path);
  return {bytes.begin(), bytes.end()};
}

// Two-class model whose prediction is the argmax of the raw features.
void write_identity_model(const fs::path& dir) {
  const ModelConfig config{2, 2, 2, Variant::PlainDag, {Direction::SE}};
  auto p = ModelParams<float>::zeros(config);
  p.embed.setIdentity();
  p.dirs[0].U.setIdentity();
  p.dirs[0].V = Mat<float>::Identity(2, 2) * 10.0f;
  save_model(dir, config, p);
}

Sample onehot_sample(GridDims dims, const std::vector<std::uint8_t>& shown, const std::vector<std::uint8_t>& truth) {
  Sample s{dims, Mat<float>::Zero(static_cast<Eigen::Index>(dims.units()), 2), truth};
  for (std::size_t i = 0; i < shown.size(); ++i) s.features(static_cast<Eigen::Index>(i), shown[i]) = 1.0f;
  return s;
}

std::map<std::string, std::string> key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    const auto eq = line.find('=');
    if (eq != std::string::npos && line.find(' ') == std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

class ScopedEnv {
 public:
  ScopedEnv(const char* name, const char* value) : name_(name) { ::setenv(name, value, 1); }
  ~ScopedEnv() { ::unsetenv(name_); }

 private:
  const char* name_;
};

}  // namespace

TEST_CASE("gradcheck exit codes") {
  const auto ok = run({"gradcheck", "--variant", "dense-attention", "--direction", "all"});
  CHECK(ok.code == kExitOk);
  CHECK(ok.out.find("0 of 4 checks failed") != std::string::npos);

  const auto strict = run({"gradcheck", "--variant", "chain", "--direction", "se", "--tol", "0"});
  CHECK(strict.code == kExitCheckFail);
  CHECK(strict.out.find("FAIL") != std::string::npos);

  const auto bogus = run({"gradcheck", "--variant", "bogus"});
  CHECK(bogus.code == kExitUsage);
  CHECK(bogus.err.find("Usage") != std::string::npos);
  CHECK(run({"gradcheck", "--eps", "-1"}).code == kExitUsage);
}

TEST_CASE("usage errors") {
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"frobnicate"}).code == kExitUsage);
  CHECK(run({"gradcheck", "--no-such-flag"}).code == kExitUsage);
  CHECK(run({"bench", "--reps", "1", "extra"}).code == kExitUsage);
}

TEST_CASE("help lists every flag with its default") {
  const auto top = run({"--help"});
  CHECK(top.code == kExitOk);
  for (const char* cmd : {"gradcheck", "gen-data", "train", "eval", "predict", "bench"}) {
    CHECK(top.out.find(cmd) != std::string::npos);
  }
  const auto gc = run({"gradcheck", "--help"});
  CHECK(gc.code == kExitOk);
  CHECK(gc.out.find("[1e-05]") != std::string::npos);
  CHECK(gc.out.find("[0.0001]") != std::string::npos);
  const auto tr = run({"train", "--help"});
  for (const char* flag : {"--lr-rnn", "--decay-start-epoch", "--clip-threshold", "--val-fraction", "--config"}) {
    CHECK(tr.out.find(flag) != std::string::npos);
  }
  CHECK(tr.out.find("[0.9]") != std::string::npos);
  const auto bench = run({"bench", "--help"});
  CHECK(bench.out.find("[8,16]") != std::string::npos);
}

TEST_CASE("gen-data") {
  TempDir dir("gen");
  const auto a = dir / "a";
  const auto b = dir / "b";
  const auto r = run({"gen-data", "--task", "marker", "--samples", "200", "--seed", "3", "--out", a.string()});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("200 samples") != std::string::npos);
  CHECK(count_files(a) == 401);
  CHECK(run({"gen-data", "--task", "marker", "--samples", "200", "--seed", "3", "--out", b.string()}).code == 0);
  for (const auto& entry : fs::directory_iterator(a)) {
    CHECK(testing::file_bytes(entry.path()) == testing::file_bytes(b / entry.path().filename()));
  }

  CHECK(run({"gen-data", "--task", "marker"}).code == kExitUsage);
  CHECK(run({"gen-data", "--task", "spiral", "--out", (dir / "c").string()}).code == kExitUsage);
  CHECK(run({"gen-data", "--task", "chain", "--length", "8", "--samples", "3", "--out", (dir / "c").string()}).code ==
        kExitOk);
  CHECK(load_dataset(dir / "c").front().dims == GridDims{1, 8});

  std::ofstream(dir / "file") << "x";
  CHECK(run({"gen-data", "--task", "blob", "--out", (dir / "file" / "sub").string()}).code == kExitIo);
}

TEST_CASE("train with zero epochs writes the initial parameters") {
  TempDir dir("train0");
  save_dataset(gen_blob_task({4, 4}, 3, 5, 1), dir / "data");
  const auto r = run({"train", "--data", (dir / "data").string(), "--out", (dir / "m").string(), "--hidden", "6",
                      "--classes", "3", "--seed", "9", "--epochs", "0"});
  REQUIRE(r.code == kExitOk);
  CHECK(read(dir / "m" / "history.txt") == "# epoch loss lr gpa aca miou\n");
  const StoredModel m = load_model(dir / "m");
  CHECK(m.config.in_channels == 3);
  CHECK(m.config.hidden == 6);
  ModelConfig config = m.config;
  Rng rng(9);
  const auto init = init_params<float>(config, rng, GridDims{4, 4});
  CHECK(flatten(m.params) == flatten(init));
}

TEST_CASE("train reads a config file and lets flags override it") {
  TempDir dir("traincfg");
  save_dataset(gen_blob_task({4, 4}, 3, 6, 1), dir / "data");
  std::ofstream(dir / "run.cfg") << "variant = dense-sum\nhidden = 5\nclasses = 3\nepochs = 2\n"
                                 << "data = " << (dir / "data").string() << "\n";
  const auto r = run({"train", "--config", (dir / "run.cfg").string(), "--out", (dir / "m").string(), "--epochs", "1"});
  REQUIRE(r.code == kExitOk);
  std::istringstream history(read(dir / "m" / "history.txt"));
  std::string header, row, extra;
  std::getline(history, header);
  std::getline(history, row);
  CHECK(row.rfind("1 ", 0) == 0);
  CHECK_FALSE(std::getline(history, extra));
  CHECK(load_model(dir / "m").config.variant == Variant::DenseSum);

  std::ofstream(dir / "bad.cfg") << "hiden = 5\n";
  CHECK(run({"train", "--config", (dir / "bad.cfg").string(), "--data", (dir / "data").string(), "--out",
             (dir / "m2").string()})
            .code == kExitUsage);
  CHECK(run({"train", "--out", (dir / "m3").string()}).code == kExitUsage);
  CHECK(run({"train", "--data", (dir / "nowhere").string(), "--out", (dir / "m4").string()}).code == kExitIo);
  CHECK(run({"train", "--data", (dir / "data").string(), "--out", (dir / "m5").string(), "--in-channels", "7"}).code ==
        kExitShape);
}

TEST_CASE("train is reproducible with and without evaluation threads") {
  TempDir dir("trainrep");
  save_dataset(gen_blob_task({5, 5}, 3, 10, 2), dir / "data");
  auto train_into = [&](const std::string& name) {
    return run({"train", "--data", (dir / "data").string(), "--out", (dir / name).string(), "--hidden", "6",
                "--classes", "3", "--epochs", "2", "--seed", "4", "--val-fraction", "0.3"})
        .code;
  };
  REQUIRE(train_into("a") == kExitOk);
  {
    ScopedEnv env("DDRNN_THREADS", "3");
    REQUIRE(train_into("b") == kExitOk);
  }
  for (const auto& entry : fs::directory_iterator(dir / "a")) {
    if (entry.path().filename() == "run.cfg") continue;
    CHECK(testing::file_bytes(entry.path()) == testing::file_bytes(dir / "b" / entry.path().filename()));
  }
  ScopedEnv bad("DDRNN_THREADS", "many");
  CHECK(train_into("c") == kExitUsage);
}

TEST_CASE("train reports a diverging loss") {
  TempDir dir("trainnan");
  save_dataset(gen_blob_task({4, 4}, 3, 3, 1), dir / "data");
  const auto r = run({"train", "--data", (dir / "data").string(), "--out", (dir / "m").string(), "--classes", "3",
                      "--epochs", "2", "--lr-rnn", "1e30", "--val-fraction", "0"});
  CHECK(r.code == kExitNumeric);
  CHECK(r.err.find("epoch 1") != std::string::npos);
}

TEST_CASE("eval") {
  TempDir dir("eval");
  write_identity_model(dir / "model");

  // Hand fixture: truth 0 0 1 1, prediction 0 1 1 1.
  save_dataset({onehot_sample({1, 4}, {0, 1, 1, 1}, {0, 0, 1, 1})}, dir / "hand");
  const auto hand = run({"eval", "--model", (dir / "model").string(), "--data", (dir / "hand").string()});
  REQUIRE(hand.code == kExitOk);
  const auto kv = key_values(hand.out);
  CHECK(std::stod(kv.at("gpa")) == 0.75);
  CHECK(std::stod(kv.at("aca")) == 0.75);
  CHECK(std::abs(std::stod(kv.at("miou")) - 0.583333) < 1e-6);
  CHECK(hand.out.find("mean IoU") != std::string::npos);

  // Perfect oracle.
  Rng rng(3);
  Dataset oracle;
  for (int i = 0; i < 3; ++i) {
    const auto y = testing::random_labels({3, 3}, 2, rng);
    oracle.push_back(onehot_sample({3, 3}, y, y));
  }
  save_dataset(oracle, dir / "oracle");
  const auto perfect = run({"eval", "--model", (dir / "model").string(), "--data", (dir / "oracle").string()});
  CHECK(key_values(perfect.out).at("gpa") == "1");

  // Same numbers as the library call.
  const Dataset blob = gen_blob_task({4, 4}, 2, 4, 7);
  save_dataset(blob, dir / "blob");
  const StoredModel m = load_model(dir / "model");
  const MetricsReport direct = evaluate(m.config, m.params, blob);
  const auto via_cli = key_values(run({"eval", "--model", (dir / "model").string(), "--data", (dir / "blob").string()}).out);
  CHECK(std::stod(via_cli.at("gpa")) == direct.gpa);
  CHECK(std::stod(via_cli.at("miou")) == direct.mean_iou);

  save_dataset(gen_blob_task({3, 3}, 3, 2, 1), dir / "three");
  CHECK(run({"eval", "--model", (dir / "model").string(), "--data", (dir / "three").string()}).code == kExitShape);
  CHECK(run({"eval", "--model", (dir / "none").string(), "--data", (dir / "three").string()}).code == kExitIo);
}

TEST_CASE("predict") {
  TempDir dir("predict");
  write_identity_model(dir / "model");
  const Sample s = onehot_sample({2, 3}, {0, 1, 1, 0, 0, 1}, std::vector<std::uint8_t>(6, 0));
  std::vector<float> values(s.features.data(), s.features.data() + s.features.size());
  save_tensor(dir / "in.ddrt", Tensor::from_f32(values, {2, 3, 2}));

  const auto r = run({"predict", "--model", (dir / "model").string(), "--input", (dir / "in.ddrt").string(), "--out",
                      (dir / "out.pgm").string(), "--color", (dir / "out.ppm").string()});
  REQUIRE(r.code == kExitOk);
  const std::string header = "P5\n3 2\n255\n";
  std::vector<std::uint8_t> want(header.begin(), header.end());
  want.insert(want.end(), {0, 1, 1, 0, 0, 1});
  CHECK(testing::file_bytes(dir / "out.pgm") == want);
  CHECK(read_label_map(dir / "out.pgm").dims == GridDims{2, 3});
  CHECK(fs::file_size(dir / "out.ppm") == std::string("P6\n3 2\n255\n").size() + 18);

  const auto again = run({"predict", "--model", (dir / "model").string(), "--input", (dir / "in.ddrt").string(),
                          "--out", (dir / "again.pgm").string()});
  CHECK(again.code == kExitOk);
  CHECK(testing::file_bytes(dir / "again.pgm") == want);

  save_tensor(dir / "wide.ddrt", Tensor::from_f32(std::vector<float>(12, 0.0f), {2, 2, 3}));
  CHECK(run({"predict", "--model", (dir / "model").string(), "--input", (dir / "wide.ddrt").string(), "--out",
             (dir / "x.pgm").string()})
            .code == kExitShape);
  CHECK(run({"predict", "--model", (dir / "model").string(), "--input", (dir / "missing.ddrt").string(), "--out",
             (dir / "x.pgm").string()})
            .code == kExitIo);
}

TEST_CASE("bench smoke run") {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = run({"bench", "--sizes", "2", "--reps", "1"});
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(r.code == kExitOk);
  CHECK(seconds < 1.0);
  CHECK(r.out.find("ratio dense-attention/plain-dag size 2") != std::string::npos);
  CHECK(run({"bench", "--sizes", "2,x"}).code == kExitUsage);
  CHECK(run({"bench", "--variants", "gru"}).code == kExitUsage);
}
