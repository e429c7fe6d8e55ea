#pragma once

// Model checkpoint serialization.  A checkpoint is a short text header (format
// tag, vocabulary hash, encoder configuration, tensor count) followed by one
// named, shape-prefixed block of little-endian float32 values per parameter.
// Writing is fully deterministic: the same state produces byte-identical
// files, which the reproducibility checks rely on.

#include <cstdint>
#include <string>

#include "readmit/encoder.hpp"

namespace readmit {

void save_checkpoint(const std::string &path, const EncoderState &state);

// Reads a checkpoint back.  If expected_vocab_hash is nonzero and differs
// from the stored hash, throws VocabHashMismatch: weights indexed by one
// vocabulary are meaningless under another.
EncoderState load_checkpoint(const std::string &path, uint64_t expected_vocab_hash = 0);

} // namespace readmit
