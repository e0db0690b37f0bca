#include "bprobe/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

namespace bprobe::tinylm {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts unsupported");

constexpr char kMagic[4] = {'B', 'P', 'L', 'M'};

template <typename F>
void visit_weights(const ModelParams& p, F&& f) {
  f(p.embedding);
  f(p.pos_embedding);
  for (const auto& l : p.layers) {
    f(l.ln1_g);
    f(l.ln1_b);
    f(l.wq);
    f(l.bq);
    f(l.wk);
    f(l.bk);
    f(l.wv);
    f(l.bv);
    f(l.wo);
    f(l.bo);
    f(l.ln2_g);
    f(l.ln2_b);
    f(l.w_fc);
    f(l.b_fc);
    f(l.w_proj);
    f(l.b_proj);
  }
  f(p.lnf_g);
  f(p.lnf_b);
  if (!p.config.tied_head) f(p.head);
}

template <typename F>
void visit_weights_mut(ModelParams& p, F&& f) {
  f(p.embedding);
  f(p.pos_embedding);
  for (auto& l : p.layers) {
    f(l.ln1_g);
    f(l.ln1_b);
    f(l.wq);
    f(l.bq);
    f(l.wk);
    f(l.bk);
    f(l.wv);
    f(l.bv);
    f(l.wo);
    f(l.bo);
    f(l.ln2_g);
    f(l.ln2_b);
    f(l.w_fc);
    f(l.b_fc);
    f(l.w_proj);
    f(l.b_proj);
  }
  f(p.lnf_g);
  f(p.lnf_b);
  if (!p.config.tied_head) f(p.head);
}

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw DataError("checkpoint: truncated header");
  return v;
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  const auto& cfg = model.params.config;
  nlohmann::json header = {
      {"config",
       {{"vocab_size", cfg.vocab_size},
        {"d_model", cfg.d_model},
        {"n_layers", cfg.n_layers},
        {"n_heads", cfg.n_heads},
        {"d_ff", cfg.d_ff},
        {"max_context", cfg.max_context},
        {"seed", cfg.seed},
        {"tied_head", cfg.tied_head}}},
      {"vocab", model.tokenizer.words()},
  };
  std::string json_text = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("checkpoint: cannot open for write: " + path);
  os.write(kMagic, 4);
  write_u32(os, kCheckpointVersion);
  write_u32(os, static_cast<std::uint32_t>(json_text.size()));
  os.write(json_text.data(), static_cast<std::streamsize>(json_text.size()));

  std::uint64_t checksum = 0xcbf29ce484222325ULL;
  visit_weights(model.params, [&](const auto& block) {
    const char* bytes = reinterpret_cast<const char*>(block.data());
    std::size_t n = static_cast<std::size_t>(block.size()) * sizeof(double);
    os.write(bytes, static_cast<std::streamsize>(n));
    checksum = fnv1a64(bytes, n, checksum);
  });
  os.write(reinterpret_cast<const char*>(&checksum), sizeof(checksum));
  if (!os) throw DataError("checkpoint: write failed: " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open: " + path);
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("checkpoint: bad magic (not a BPLM file): " + path);
  std::uint32_t version = read_u32(is);
  if (version != kCheckpointVersion)
    throw DataError("checkpoint: unsupported format version " + std::to_string(version));
  std::uint32_t json_len = read_u32(is);
  std::string json_text(json_len, '\0');
  is.read(json_text.data(), json_len);
  if (!is) throw DataError("checkpoint: truncated header json");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: corrupt header json: ") + e.what());
  }

  Model model;
  try {
    const auto& jc = header.at("config");
    auto& cfg = model.params.config;
    cfg.vocab_size = jc.at("vocab_size").get<int>();
    cfg.d_model = jc.at("d_model").get<int>();
    cfg.n_layers = jc.at("n_layers").get<int>();
    cfg.n_heads = jc.at("n_heads").get<int>();
    cfg.d_ff = jc.at("d_ff").get<int>();
    cfg.max_context = jc.at("max_context").get<int>();
    cfg.seed = jc.at("seed").get<std::uint64_t>();
    cfg.tied_head = jc.at("tied_head").get<bool>();
    model.tokenizer = Tokenizer::from_words(header.at("vocab").get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: header fields missing or invalid: ") + e.what());
  }
  model.params.config.validate();
  if (model.tokenizer.size() != model.params.config.vocab_size)
    throw DataError("checkpoint: vocab list size does not match config vocab_size");

  // allocate per config, then fill blocks in order
  ModelParams shaped = init_params(model.params.config);
  model.params.layers = std::move(shaped.layers);
  model.params.embedding = std::move(shaped.embedding);
  model.params.pos_embedding = std::move(shaped.pos_embedding);
  model.params.lnf_g = std::move(shaped.lnf_g);
  model.params.lnf_b = std::move(shaped.lnf_b);
  model.params.head = std::move(shaped.head);

  std::uint64_t checksum = 0xcbf29ce484222325ULL;
  visit_weights_mut(model.params, [&](auto& block) {
    char* bytes = reinterpret_cast<char*>(block.data());
    std::size_t n = static_cast<std::size_t>(block.size()) * sizeof(double);
    is.read(bytes, static_cast<std::streamsize>(n));
    if (!is) throw DataError("checkpoint: truncated weight block (shape mismatch or corrupt file)");
    checksum = fnv1a64(bytes, n, checksum);
  });
  std::uint64_t stored = 0;
  is.read(reinterpret_cast<char*>(&stored), sizeof(stored));
  if (!is) throw DataError("checkpoint: missing checksum (corrupt file)");
  if (stored != checksum) throw DataError("checkpoint: checksum mismatch (corrupt file)");
  is.peek();
  if (!is.eof()) throw DataError("checkpoint: trailing bytes after checksum (corrupt file)");
  if (!model.params.finite()) throw DataError("checkpoint: non-finite weights");
  return model;
}

}  // namespace bprobe::tinylm
