#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "icare/checkpoint.hpp"
#include "icare/digest.hpp"
#include "icare/ops.hpp"
#include "icare/optim.hpp"
#include "icare/serialize.hpp"

using namespace icare;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("icare_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

Tensor<double> random_tensor(Shape shape, RandomStream& rng) {
  Tensor<double> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.normal();
  return t;
}

}  // namespace

TEST_CASE("record files round-trip bit-exactly") {
  TempDir dir;
  RandomStream rng(21);
  Tensor<double> a = random_tensor({3, 4}, rng);
  Tensor<float> b({5});
  for (Index i = 0; i < 5; ++i) b[i] = static_cast<float>(rng.normal());

  std::vector<records::Record> recs;
  recs.push_back(records::from_tensor("alpha", a));
  recs.push_back(records::from_tensor("beta", b));
  recs.push_back(records::from_string("note", "hello \x01 \xff bytes"));
  records::write_file(dir.file("t.icre"), kCheckpointMagic, recs);

  std::uint16_t version = 0;
  auto back = records::read_file(dir.file("t.icre"), kCheckpointMagic, &version);
  CHECK(version == records::kFormatVersion);
  REQUIRE(back.size() == 3);
  CHECK(back[0].name == "alpha");
  CHECK(bitwise_equal(records::to_tensor<double>(back[0]), a));
  CHECK(bitwise_equal(records::to_tensor<float>(back[1]), b));
  CHECK(records::to_string(back[2]) == "hello \x01 \xff bytes");

  // dtype guard
  CHECK_THROWS_AS(records::to_tensor<float>(back[0]), IoError);
  CHECK_THROWS_AS(records::to_string(back[0]), IoError);

  // write + rewrite produces identical bytes
  records::write_file(dir.file("t2.icre"), kCheckpointMagic, recs);
  CHECK(digest_file(dir.file("t.icre")) == digest_file(dir.file("t2.icre")));
}

TEST_CASE("record file error handling") {
  TempDir dir;
  CHECK_THROWS_AS(records::read_file(dir.file("absent.icre"), kCheckpointMagic), IoError);

  {
    std::ofstream f(dir.file("bad.icre"), std::ios::binary);
    f << "NOPE\x01\x00";
  }
  CHECK_THROWS_AS(records::read_file(dir.file("bad.icre"), kCheckpointMagic), IoError);

  // truncated payload
  std::vector<records::Record> recs{records::from_tensor("x", Tensor<double>({4}, {1, 2, 3, 4}))};
  records::write_file(dir.file("full.icre"), kCheckpointMagic, recs);
  {
    std::ifstream in(dir.file("full.icre"), std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out(dir.file("trunc.icre"), std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 7));
  }
  CHECK_THROWS_AS(records::read_file(dir.file("trunc.icre"), kCheckpointMagic), IoError);

  // wrong magic constant for the file type
  CHECK_THROWS_AS(records::read_file(dir.file("full.icre"), kRasterMagic), IoError);
}

TEST_CASE("checkpoint save/load round-trips a model bit-exactly") {
  TempDir dir;
  RandomStream rng(22);

  auto build = [](std::uint64_t seed) {
    RandomStream r(seed);
    struct Model {
      DenseParams<double> fc1, fc2;
      BatchNormParams<double> bn;
      ParameterSet<double> ps;
    };
    auto m = std::make_unique<Model>();
    m->fc1 = make_dense<double>("fc1", 6, 8, r);
    m->bn = make_batchnorm<double>("bn", 8);
    m->fc2 = make_dense<double>("fc2", 8, 2, r);
    m->ps.add(m->fc1.weight);
    m->ps.add(m->fc1.bias);
    m->ps.add(m->bn.gamma);
    m->ps.add(m->bn.beta);
    m->ps.add(m->fc2.weight);
    m->ps.add(m->fc2.bias);
    return m;
  };

  auto m1 = build(1);
  // make running stats non-trivial
  for (Index i = 0; i < 8; ++i) {
    m1->bn.running_mean[i] = rng.normal();
    m1->bn.running_var[i] = std::abs(rng.normal()) + 0.5;
  }
  auto adam = AdamState<double>::init(m1->ps);
  adam.t = 17;
  for (auto& t : adam.m)
    for (Index i = 0; i < t.size(); ++i) t[i] = rng.normal();
  for (auto& t : adam.v)
    for (Index i = 0; i < t.size(); ++i) t[i] = std::abs(rng.normal());

  BufferList<double> bufs1{{"bn.running_mean", &m1->bn.running_mean},
                           {"bn.running_var", &m1->bn.running_var}};
  nlohmann::json meta{{"arch", "toy"}, {"epoch", 3}};
  save_checkpoint(dir.file("m.icre"), meta, m1->ps, bufs1, &adam);

  auto m2 = build(2);  // different init, to prove loading overwrites
  BufferList<double> bufs2{{"bn.running_mean", &m2->bn.running_mean},
                           {"bn.running_var", &m2->bn.running_var}};
  AdamState<double> adam2;
  bool adam_loaded = false;
  nlohmann::json meta2 = load_checkpoint(dir.file("m.icre"), m2->ps, bufs2, &adam2, &adam_loaded);

  CHECK(meta2["arch"] == "toy");
  CHECK(meta2["epoch"] == 3);
  CHECK(adam_loaded);
  CHECK(adam2.t == 17);
  for (std::size_t i = 0; i < m1->ps.count(); ++i) {
    CHECK(bitwise_equal(m1->ps.all()[i]->value, m2->ps.all()[i]->value));
    CHECK(bitwise_equal(adam.m[i], adam2.m[i]));
    CHECK(bitwise_equal(adam.v[i], adam2.v[i]));
  }
  CHECK(bitwise_equal(m1->bn.running_mean, m2->bn.running_mean));
  CHECK(bitwise_equal(m1->bn.running_var, m2->bn.running_var));

  // saving the loaded model again reproduces identical bytes
  save_checkpoint(dir.file("m2.icre"), meta2, m2->ps, bufs2, &adam2);
  CHECK(digest_file(dir.file("m.icre")) == digest_file(dir.file("m2.icre")));

  // meta peek without loading tensors
  CHECK(peek_checkpoint_meta(dir.file("m.icre"))["arch"] == "toy");

  // checkpoint without adam: flag reports absence
  save_checkpoint(dir.file("noadam.icre"), meta, m1->ps, bufs1);
  AdamState<double> adam3;
  bool loaded3 = true;
  load_checkpoint(dir.file("noadam.icre"), m2->ps, bufs2, &adam3, &loaded3);
  CHECK(!loaded3);
}

TEST_CASE("checkpoint load rejects missing records and shape mismatches") {
  TempDir dir;
  RandomStream rng(23);
  auto p = make_dense<double>("fc", 3, 2, rng);
  ParameterSet<double> ps;
  ps.add(p.weight);
  ps.add(p.bias);
  save_checkpoint(dir.file("a.icre"), nlohmann::json::object(), ps, {});

  // extra parameter not in the file
  auto q = make_dense<double>("other", 3, 2, rng);
  ParameterSet<double> ps2;
  ps2.add(q.weight);
  ps2.add(q.bias);
  CHECK_THROWS_AS(load_checkpoint(dir.file("a.icre"), ps2, {}), IoError);

  // same names, wrong shape
  auto r = make_dense<double>("fc", 4, 2, rng);
  ParameterSet<double> ps3;
  ps3.add(r.weight);
  ps3.add(r.bias);
  CHECK_THROWS_AS(load_checkpoint(dir.file("a.icre"), ps3, {}), IoError);
}

TEST_CASE("digest helpers") {
  CHECK(fnv1a64("", 0) == 14695981039346656037ULL);  // FNV offset basis
  const char* s = "a";
  CHECK(fnv1a64(s, 1) == 12638187200555641996ULL);  // published FNV-1a test vector
  CHECK(hex64(0x1234abcd) == "000000001234abcd");

  Tensor<double> t({2}, {1.0, 2.0});
  Tensor<double> u({2}, {1.0, 2.0});
  CHECK(digest_tensor(t) == digest_tensor(u));
  u[1] = 2.0000000001;
  CHECK(digest_tensor(t) != digest_tensor(u));
}
