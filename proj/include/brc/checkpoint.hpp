// Self-describing text checkpoints.
//
// Layout (UTF-8 text, '\n' line endings):
//
//   brc-checkpoint 1
//   <key>=<value>                 one line per metadata entry, sorted by key
//   tensors <count>
//   tensor <name> <rows> <cols>   followed by <rows> lines of <cols> values
//   ...
//   end
//
// Values are written row-major with 17 significant digits, which round-trips
// every double exactly. The metadata always carries cell, layers, input_dim,
// output_dim and head; seed and iteration are written by the trainer, and any
// other key is free-form.
#pragma once

#include "brc/network.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>

namespace brc {

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  Network<double> net;
  std::map<std::string, std::string> meta;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// "NxM" shorthand: N layers of M neurons. A comma list ("50,20") is also accepted.
std::vector<Index> parse_layers(const std::string& text);
std::string format_layers(const std::vector<Index>& sizes);

}  // namespace brc
