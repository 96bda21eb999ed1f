// SPDX-License-Identifier: Apache-2.0
#include "iag/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace iag {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::ifstream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw StageError("checkpoint: truncated tensor file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

void write_f32(std::ofstream& out, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  write_u32(out, v);
}

float read_f32(std::ifstream& in) {
  std::uint32_t v = read_u32(in);
  float f;
  std::memcpy(&f, &v, 4);
  return f;
}

json read_meta(const std::string& dir) {
  std::ifstream in(dir + "/meta.json", std::ios::binary);
  if (!in) throw ConfigError("checkpoint not found: " + dir);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw StageError("checkpoint meta corrupt: " + dir);
  return j;
}

}  // namespace

void Checkpoint::save(const Seq2SeqModel& model, const std::string& dir, std::uint64_t vocab_hash,
                      long step) {
  fs::create_directories(dir);
  const auto& cfg = model.config();
  json meta;
  meta["vocab_size"] = cfg.vocab_size;
  meta["d_model"] = cfg.d_model;
  meta["n_layers"] = cfg.n_layers;
  meta["n_heads"] = cfg.n_heads;
  meta["d_ff"] = cfg.d_ff;
  meta["max_len"] = cfg.max_len;
  meta["vocab_hash"] = hex64(vocab_hash);
  meta["step"] = step;
  meta["param_count"] = model.param_count();
  {
    std::ofstream out(dir + "/meta.json", std::ios::binary);
    if (!out) throw StageError("cannot write checkpoint meta: " + dir);
    out << meta.dump(2) << "\n";
  }
  std::ofstream out(dir + "/tensors.bin", std::ios::binary);
  if (!out) throw StageError("cannot write checkpoint tensors: " + dir);
  for (const auto& [name, p] : model.named_params()) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, 2);
    write_u32(out, static_cast<std::uint32_t>(p->value.rows));
    write_u32(out, static_cast<std::uint32_t>(p->value.cols));
    for (real_t x : p->value.data) write_f32(out, static_cast<float>(x));
  }
}

std::unique_ptr<Seq2SeqModel> Checkpoint::load(const std::string& dir) {
  json meta = read_meta(dir);
  ModelConfig cfg;
  cfg.vocab_size = meta.at("vocab_size").get<int>();
  cfg.d_model = meta.at("d_model").get<int>();
  cfg.n_layers = meta.at("n_layers").get<int>();
  cfg.n_heads = meta.at("n_heads").get<int>();
  cfg.d_ff = meta.at("d_ff").get<int>();
  cfg.max_len = meta.at("max_len").get<int>();
  auto model = std::make_unique<Seq2SeqModel>(cfg, 0);

  std::ifstream in(dir + "/tensors.bin", std::ios::binary);
  if (!in) throw StageError("checkpoint tensors missing: " + dir);
  std::map<std::string, ad::NodePtr> by_name;
  for (const auto& [name, p] : model->named_params()) by_name[name] = p;
  size_t loaded = 0;
  while (true) {
    in.peek();
    if (in.eof()) break;
    std::uint32_t name_len = read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    std::uint32_t rank = read_u32(in);
    if (rank != 2) throw StageError("checkpoint: unsupported tensor rank");
    int rows = static_cast<int>(read_u32(in));
    int cols = static_cast<int>(read_u32(in));
    auto it = by_name.find(name);
    if (it == by_name.end()) throw StageError("checkpoint: unknown tensor " + name);
    auto& t = it->second->value;
    if (t.rows != rows || t.cols != cols) {
      throw StageError("checkpoint: shape mismatch for tensor " + name);
    }
    for (auto& x : t.data) x = static_cast<real_t>(read_f32(in));
    ++loaded;
  }
  if (loaded != model->named_params().size()) {
    throw StageError("checkpoint: tensor count mismatch in " + dir);
  }
  return model;
}

std::unique_ptr<Seq2SeqModel> Checkpoint::load(const std::string& dir,
                                               std::uint64_t expect_vocab_hash) {
  if (stored_vocab_hash(dir) != expect_vocab_hash) {
    throw StageError("checkpoint vocab hash mismatch: " + dir);
  }
  return load(dir);
}

long Checkpoint::stored_step(const std::string& dir) { return read_meta(dir).at("step").get<long>(); }

std::uint64_t Checkpoint::stored_vocab_hash(const std::string& dir) {
  return std::stoull(read_meta(dir).at("vocab_hash").get<std::string>(), nullptr, 16);
}

}  // namespace iag
