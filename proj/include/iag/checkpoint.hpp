// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>

#include "iag/seq2seq.hpp"

namespace iag {

// Checkpoint directory layout:
//   meta.json    - model hyperparameters, vocab hash, step count
//   tensors.bin  - per-tensor blobs: u32 name length, name bytes, u32 rank,
//                  u32 dims, then row-major little-endian IEEE-754 f32 data
// Round trips of saved checkpoints are bit-exact.
class Checkpoint {
 public:
  static void save(const Seq2SeqModel& model, const std::string& dir, std::uint64_t vocab_hash,
                   long step);
  static std::unique_ptr<Seq2SeqModel> load(const std::string& dir);
  // Loads and verifies the stored vocab hash matches.
  static std::unique_ptr<Seq2SeqModel> load(const std::string& dir, std::uint64_t expect_vocab_hash);
  static long stored_step(const std::string& dir);
  static std::uint64_t stored_vocab_hash(const std::string& dir);
};

}  // namespace iag
