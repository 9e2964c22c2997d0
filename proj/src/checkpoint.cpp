#include "brc/checkpoint.hpp"

#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace brc {
namespace {

const char* kMagic = "brc-checkpoint";

std::string head_name(OutputHead head) { return head == OutputHead::softmax ? "softmax" : "linear"; }

OutputHead parse_head(const std::string& s) {
  if (s == "linear") return OutputHead::linear;
  if (s == "softmax") return OutputHead::softmax;
  throw CheckpointError("checkpoint: unknown head '" + s + "'");
}

Index parse_index(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return Index(v);
  } catch (const std::exception&) {
    throw CheckpointError("checkpoint: bad " + what + " '" + s + "'");
  }
}

const std::string& meta_at(const std::map<std::string, std::string>& meta, const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw CheckpointError("checkpoint: missing key '" + key + "'");
  return it->second;
}

}  // namespace

std::vector<Index> parse_layers(const std::string& text) {
  std::vector<Index> sizes;
  const auto x = text.find('x');
  if (x != std::string::npos) {
    const Index count = parse_index(text.substr(0, x), "layer count");
    const Index width = parse_index(text.substr(x + 1), "layer width");
    require(count >= 1 && width >= 1, "layers: '" + text + "' must have positive count and width");
    sizes.assign(std::size_t(count), width);
    return sizes;
  }
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const Index width = parse_index(item, "layer width");
    require(width >= 1, "layers: widths must be positive");
    sizes.push_back(width);
  }
  require(!sizes.empty(), "layers: empty specification");
  return sizes;
}

std::string format_layers(const std::vector<Index>& sizes) {
  std::string out;
  for (std::size_t i = 0; i < sizes.size(); ++i) out += (i ? "," : "") + std::to_string(sizes[i]);
  return out;
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  auto meta = ckpt.meta;
  const NetworkSpec& spec = ckpt.net.spec;
  meta["cell"] = std::string(to_string(spec.cell));
  meta["layers"] = format_layers(spec.layer_sizes);
  meta["input_dim"] = std::to_string(spec.input_dim);
  meta["output_dim"] = std::to_string(spec.output_dim);
  meta["head"] = head_name(spec.head);

  out << kMagic << ' ' << kCheckpointVersion << '\n';
  for (const auto& [key, value] : meta) {
    if (key.find_first_of("=\n") != std::string::npos || value.find('\n') != std::string::npos)
      throw CheckpointError("checkpoint: metadata '" + key + "' cannot be encoded");
    out << key << '=' << value << '\n';
  }
  const auto views = tensor_views(ckpt.net);
  out << "tensors " << views.size() << '\n';
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& v : views) {
    out << "tensor " << v.name << ' ' << v.rows << ' ' << v.cols << '\n';
    const auto m = v.map();
    for (Index i = 0; i < v.rows; ++i) {
      for (Index j = 0; j < v.cols; ++j) out << (j ? " " : "") << m(i, j);
      out << '\n';
    }
  }
  out << "end\n";
}

Checkpoint read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw CheckpointError("checkpoint: empty input");
  {
    std::istringstream head(line);
    std::string magic;
    int version = 0;
    if (!(head >> magic >> version) || magic != kMagic) throw CheckpointError("checkpoint: not a brc checkpoint");
    if (version != kCheckpointVersion)
      throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  std::size_t tensor_count = 0;
  while (std::getline(in, line)) {
    if (line.rfind("tensors ", 0) == 0) {
      tensor_count = std::size_t(parse_index(line.substr(8), "tensor count"));
      break;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError("checkpoint: bad metadata line '" + line + "'");
    ckpt.meta[line.substr(0, eq)] = line.substr(eq + 1);
  }

  NetworkSpec spec;
  try {
    spec.cell = parse_cell_kind(meta_at(ckpt.meta, "cell"));
    spec.layer_sizes = parse_layers(meta_at(ckpt.meta, "layers"));
  } catch (const ContractError& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
  spec.input_dim = parse_index(meta_at(ckpt.meta, "input_dim"), "input_dim");
  spec.output_dim = parse_index(meta_at(ckpt.meta, "output_dim"), "output_dim");
  spec.head = parse_head(meta_at(ckpt.meta, "head"));
  ckpt.net = Network<double>::zeros(spec);

  auto views = tensor_views(ckpt.net);
  if (views.size() != tensor_count)
    throw CheckpointError("checkpoint: " + std::to_string(tensor_count) + " tensors stored, network has " +
                          std::to_string(views.size()));
  for (auto& v : views) {
    std::string tag, name;
    Index rows = 0, cols = 0;
    if (!(in >> tag >> name >> rows >> cols) || tag != "tensor")
      throw CheckpointError("checkpoint: truncated tensor header");
    if (name != v.name || rows != v.rows || cols != v.cols)
      throw CheckpointError("checkpoint: tensor " + name + " " + shape_str(rows, cols) + " where " + v.name + " " +
                            shape_str(v.rows, v.cols) + " was expected");
    auto m = v.map();
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) {
        std::string token;
        if (!(in >> token)) throw CheckpointError("checkpoint: truncated data in " + name);
        try {
          m(i, j) = std::stod(token);
        } catch (const std::exception&) {
          throw CheckpointError("checkpoint: bad value '" + token + "' in " + name);
        }
      }
  }
  std::string end;
  if (!(in >> end) || end != "end") throw CheckpointError("checkpoint: missing end marker");
  for (const char* key : {"cell", "layers", "input_dim", "output_dim", "head"}) ckpt.meta.erase(key);
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path);
  if (!out) throw CheckpointError("checkpoint: cannot write " + path.string());
  write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace brc
