#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <fstream>

#include "fixtures.hpp"

using namespace bprobe;
using namespace bprobe::tinylm;

namespace {

std::string temp_path(const char* tag) {
  return std::string("ckpt_test_") + tag + ".bplm";
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& body) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  os << body;
}

bool params_identical(const ModelParams& a, const ModelParams& b) {
  auto eq = [](const Mat& x, const Mat& y) {
    return x.size() == y.size() && std::memcmp(x.data(), y.data(), sizeof(double) * x.size()) == 0;
  };
  auto eqv = [](const Vec& x, const Vec& y) {
    return x.size() == y.size() && std::memcmp(x.data(), y.data(), sizeof(double) * x.size()) == 0;
  };
  if (!eq(a.embedding, b.embedding) || !eq(a.pos_embedding, b.pos_embedding)) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const auto& x = a.layers[i];
    const auto& y = b.layers[i];
    if (!eq(x.wq, y.wq) || !eq(x.wk, y.wk) || !eq(x.wv, y.wv) || !eq(x.wo, y.wo)) return false;
    if (!eq(x.w_fc, y.w_fc) || !eq(x.w_proj, y.w_proj)) return false;
    if (!eqv(x.ln1_g, y.ln1_g) || !eqv(x.ln2_b, y.ln2_b) || !eqv(x.b_fc, y.b_fc)) return false;
  }
  return eqv(a.lnf_g, b.lnf_g) && eqv(a.lnf_b, b.lnf_b);
}

}  // namespace

TEST_CASE("checkpoint round trip is bit-identical") {
  const auto& tw = test::trained_world();
  std::string path = temp_path("roundtrip");
  save_checkpoint(tw.model, path);
  Model loaded = load_checkpoint(path);
  CHECK(params_identical(tw.model.params, loaded.params));
  CHECK(loaded.tokenizer.words() == tw.model.tokenizer.words());
  CHECK(loaded.params.config.vocab_size == tw.model.params.config.vocab_size);

  // saving the loaded model reproduces the file byte for byte
  std::string path2 = temp_path("roundtrip2");
  save_checkpoint(loaded, path2);
  CHECK(slurp(path) == slurp(path2));
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("truncated checkpoints are rejected") {
  Model m = test::random_model();
  std::string path = temp_path("trunc");
  save_checkpoint(m, path);
  std::string body = slurp(path);
  spit(path, body.substr(0, body.size() / 2));
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
  spit(path, body.substr(0, 6));
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
  std::remove(path.c_str());
}

TEST_CASE("corrupted weight bytes fail the checksum") {
  Model m = test::random_model();
  std::string path = temp_path("corrupt");
  save_checkpoint(m, path);
  std::string body = slurp(path);
  body[body.size() / 2] ^= 0x40;
  spit(path, body);
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
  std::remove(path.c_str());
}

TEST_CASE("bad magic and unknown versions are rejected") {
  Model m = test::random_model();
  std::string path = temp_path("magic");
  save_checkpoint(m, path);
  std::string body = slurp(path);
  std::string bad = body;
  bad[0] = 'X';
  spit(path, bad);
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
  bad = body;
  bad[4] = 9;  // format version field
  spit(path, bad);
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
  std::remove(path.c_str());
}

TEST_CASE("trailing bytes after the checksum are rejected") {
  Model m = test::random_model();
  std::string path = temp_path("trailing");
  save_checkpoint(m, path);
  std::string body = slurp(path) + "extra";
  spit(path, body);
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
  std::remove(path.c_str());
}
