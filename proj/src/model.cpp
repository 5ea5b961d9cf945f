#include "weednet/model.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace weednet {

namespace {

std::string group_thousands(Index value) {
  std::string digits = std::to_string(value);
  std::string out;
  int count = 0;
  for (std::size_t i = digits.size(); i-- > 0;) {
    out.insert(out.begin(), digits[i]);
    if (++count == 3 && i > 0 && digits[i - 1] != '-') {
      out.insert(out.begin(), ',');
      count = 0;
    }
  }
  return out;
}

std::string shape_cell(const NodeT<float>& node) {
  std::ostringstream os;
  if (node.kind == NodeKind::input) os << "[";
  os << "(None";
  for (Index d : node.out_shape.dims()) os << ", " << d;
  os << ")";
  if (node.kind == NodeKind::input) os << "]";
  return os.str();
}

// Cells of the published reference table for the 227x227 configuration that
// disagree with the shape/parameter arithmetic. The computed values are kept;
// the reference values are surfaced as annotations.
struct ReferenceMisprint {
  const char* layer;
  const char* printed_shape;   // nullptr when the shape cell is fine
  Index printed_params;        // -1 when the params cell is fine
};

constexpr ReferenceMisprint kPaperMisprints[] = {
    {"flatten_2", "(None, 600)", -1},
    {"conv2d_3", nullptr, 10050},
    {"conv2d_8", nullptr, 10050},
    {"conv2d_4", nullptr, 27000},
    {"conv2d_9", nullptr, 27000},
    {"dense_2", nullptr, 510},
};

}  // namespace

SummaryTable summarize(const Graph& g) {
  SummaryTable table;
  for (const auto& node : g.nodes()) {
    SummaryRow row;
    row.layer = node.name + " (" + node.type_label + ")";
    row.output_shape = shape_cell(node);
    row.params = node.param_count();
    row.connected_to = node.connected_to;
    if (g.config().profile == Profile::paper) {
      for (const auto& m : kPaperMisprints) {
        if (node.name != m.layer) continue;
        if (m.printed_shape && row.output_shape != m.printed_shape) {
          row.note = "reference table prints " + std::string(m.printed_shape);
        } else if (m.printed_params >= 0 && row.params != m.printed_params) {
          row.note = "reference table prints " + std::to_string(m.printed_params);
        }
      }
    }
    table.total_params += row.params;
    table.rows.push_back(std::move(row));
  }
  for (const auto& row : table.rows) {
    if (!row.note.empty()) {
      table.footnotes.push_back("* " + row.layer + ": " + row.note +
                                "; the arithmetically consistent value is kept");
    }
  }
  return table;
}

std::string format_summary(const SummaryTable& table) {
  std::ostringstream os;
  os << "Layer (Type)\tOutput Shape\tParams\tConnected to\n";
  for (const auto& row : table.rows) {
    os << row.layer << "\t" << row.output_shape << "\t" << row.params << "\t"
       << row.connected_to;
    if (!row.note.empty()) os << "\t*";
    os << "\n";
  }
  os << "Total params: " << group_thousands(table.total_params) << "\n";
  os << "Trainable params: " << group_thousands(table.total_params) << "\n";
  os << "Non-trainable params: 0\n";
  for (const auto& note : table.footnotes) os << note << "\n";
  return os.str();
}

std::string summary_json(const SummaryTable& table) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : table.rows) {
    nlohmann::json j{{"layer", row.layer},
                     {"output_shape", row.output_shape},
                     {"params", row.params},
                     {"connected_to", row.connected_to}};
    if (!row.note.empty()) j["note"] = row.note;
    rows.push_back(std::move(j));
  }
  nlohmann::json doc{{"rows", std::move(rows)}, {"total_params", table.total_params}};
  return doc.dump(2);
}

namespace {

constexpr char kMagic[4] = {'W', 'D', 'N', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_bytes(std::ostream& os, const void* data, std::size_t n) {
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  put_bytes(os, b, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  put_u32(os, static_cast<std::uint32_t>(v));
  put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

void put_f32(std::ostream& os, float v) { put_u32(os, std::bit_cast<std::uint32_t>(v)); }

void get_bytes(std::istream& is, void* data, std::size_t n, const char* what) {
  is.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw CorruptionError(std::string("checkpoint truncated while reading ") + what);
  }
}

std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  get_bytes(is, b, 4, what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& is, const char* what) {
  const std::uint64_t lo = get_u32(is, what);
  const std::uint64_t hi = get_u32(is, what);
  return lo | (hi << 32);
}

float get_f32(std::istream& is, const char* what) {
  return std::bit_cast<float>(get_u32(is, what));
}

void put_index_list(std::ostream& os, const std::vector<Index>& values) {
  for (Index v : values) put_u32(os, static_cast<std::uint32_t>(v));
}

std::vector<Index> get_index_list(std::istream& is, std::size_t n, const char* what) {
  std::vector<Index> out(n);
  for (auto& v : out) v = static_cast<Index>(get_u32(is, what));
  return out;
}

void put_tensor(std::ostream& os, const Tensor& t) {
  for (Index i = 0; i < t.size(); ++i) put_f32(os, t[i]);
}

void get_tensor(std::istream& is, Tensor& t, const char* what) {
  for (Index i = 0; i < t.size(); ++i) t[i] = get_f32(is, what);
}

}  // namespace

void save_checkpoint(const Graph& g, const AdamState<float>* adam, long step,
                     const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open checkpoint for writing: " + path);
  const ArchitectureConfig& c = g.config();

  put_bytes(os, kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, static_cast<std::uint32_t>(c.profile));
  put_u32(os, static_cast<std::uint32_t>(c.input_extent));
  put_u32(os, static_cast<std::uint32_t>(c.input_channels));
  put_u32(os, static_cast<std::uint32_t>(c.stage_count()));
  put_index_list(os, c.filters);
  put_index_list(os, c.kernels_a);
  put_index_list(os, c.dilations_a);
  put_index_list(os, c.kernels_b);
  put_index_list(os, c.dilations_b);
  put_u32(os, static_cast<std::uint32_t>(c.hidden_units));
  put_u32(os, static_cast<std::uint32_t>(c.num_classes));

  os.put(adam ? '\x01' : '\x00');
  put_u64(os, static_cast<std::uint64_t>(step));
  put_u64(os, static_cast<std::uint64_t>(g.parameter_count()));

  Graph& mutable_g = const_cast<Graph&>(g);
  auto params = mutable_g.parameters();
  for (const auto& p : params) put_tensor(os, *p.value);
  if (adam) {
    if (adam->m.size() != params.size() || adam->v.size() != params.size()) {
      throw ShapeError("Adam state does not match the graph's parameter registry");
    }
    put_u64(os, static_cast<std::uint64_t>(adam->step));
    for (const auto& t : adam->m) put_tensor(os, t);
    for (const auto& t : adam->v) put_tensor(os, t);
  }
  if (!os) throw FormatError("write failed for checkpoint: " + path);
}

void save_checkpoint(const Graph& g, const std::string& path) {
  save_checkpoint(g, nullptr, 0, path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint: " + path);

  char magic[4];
  get_bytes(is, magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("not a checkpoint file (bad magic): " + path);
  }
  const std::uint32_t version = get_u32(is, "version");
  if (version != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }

  ArchitectureConfig c;
  const std::uint32_t profile = get_u32(is, "profile");
  if (profile > 2) throw CorruptionError("invalid profile tag in checkpoint");
  c.profile = static_cast<Profile>(profile);
  c.input_extent = static_cast<Index>(get_u32(is, "input extent"));
  c.input_channels = static_cast<Index>(get_u32(is, "input channels"));
  const std::size_t stages = get_u32(is, "stage count");
  if (stages == 0 || stages > 64) throw CorruptionError("implausible stage count in checkpoint");
  c.filters = get_index_list(is, stages, "filters");
  c.kernels_a = get_index_list(is, stages, "kernels");
  c.dilations_a = get_index_list(is, stages, "dilations");
  c.kernels_b = get_index_list(is, stages, "kernels");
  c.dilations_b = get_index_list(is, stages, "dilations");
  c.hidden_units = static_cast<Index>(get_u32(is, "hidden units"));
  c.num_classes = static_cast<Index>(get_u32(is, "class count"));

  char has_adam = 0;
  get_bytes(is, &has_adam, 1, "adam flag");

  LoadedCheckpoint loaded;
  loaded.step = static_cast<long>(get_u64(is, "step counter"));
  const std::uint64_t scalar_count = get_u64(is, "parameter count");

  loaded.graph = build_graph<float>(c, 0);
  if (scalar_count != static_cast<std::uint64_t>(loaded.graph.parameter_count())) {
    throw CorruptionError("checkpoint parameter count " + std::to_string(scalar_count) +
                          " does not match the embedded architecture (" +
                          std::to_string(loaded.graph.parameter_count()) + ")");
  }
  auto params = loaded.graph.parameters();
  for (auto& p : params) get_tensor(is, *p.value, "parameters");

  if (has_adam == '\x01') {
    AdamState<float> state = AdamState<float>::for_parameters(params);
    state.step = static_cast<long>(get_u64(is, "adam step"));
    for (auto& t : state.m) get_tensor(is, t, "adam m");
    for (auto& t : state.v) get_tensor(is, t, "adam v");
    loaded.adam = std::move(state);
  } else if (has_adam != '\x00') {
    throw CorruptionError("invalid optimizer flag in checkpoint");
  }

  is.peek();
  if (!is.eof()) throw CorruptionError("checkpoint has trailing bytes: " + path);
  return loaded;
}

}  // namespace weednet
