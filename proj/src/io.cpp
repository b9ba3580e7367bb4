#include "voxreg/io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace voxreg {

namespace {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_u8(std::ostream& os, std::uint8_t v) {
  os.put(static_cast<char>(v));
}

void write_u32(std::ostream& os, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
               static_cast<char>((v >> 16) & 0xFF),
               static_cast<char>((v >> 24) & 0xFF)};
  os.write(b, 4);
}

std::uint8_t read_u8(std::istream& is, const std::string& path) {
  int c = is.get();
  if (c == EOF) throw FormatError(path + ": unexpected end of file");
  return static_cast<std::uint8_t>(c);
}

std::uint32_t read_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw FormatError(path + ": unexpected end of file at byte " +
                      std::to_string(static_cast<long long>(is.tellg())));
  }
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError(path + ": cannot open for writing");
  return os;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError(path + ": cannot open for reading");
  return is;
}

void write_rvf_header(std::ostream& os, std::uint8_t kind, const Shape& dims) {
  os.write("RVF1", 4);
  write_u8(os, kind);
  for (Index i = 0; i < 3; ++i) {
    write_u32(os, static_cast<std::uint32_t>(dims[static_cast<size_t>(i)]));
  }
  const char reserved[16] = {};
  os.write(reserved, 16);
}

Shape read_rvf_header(std::istream& is, const std::string& path,
                      std::uint8_t expected_kind) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "RVF1", 4) != 0) {
    throw FormatError(path + ": bad magic (expected RVF1)");
  }
  const std::uint8_t kind = read_u8(is, path);
  if (kind != expected_kind) {
    throw FormatError(path + ": kind " + std::to_string(kind) +
                      " does not match expected " +
                      std::to_string(expected_kind));
  }
  Shape dims(3);
  for (int i = 0; i < 3; ++i) {
    dims[static_cast<size_t>(i)] = static_cast<Index>(read_u32(is, path));
  }
  char reserved[16];
  if (!is.read(reserved, 16)) {
    throw FormatError(path + ": truncated header");
  }
  return dims;
}

void write_f32_payload(std::ostream& os, const ArrayXd& data) {
  std::vector<float> buf(static_cast<size_t>(data.size()));
  for (Index i = 0; i < data.size(); ++i) {
    buf[static_cast<size_t>(i)] = static_cast<float>(data(i));
  }
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

ArrayXd read_f32_payload(std::istream& is, const std::string& path, Index n) {
  std::vector<float> buf(static_cast<size_t>(n));
  if (!is.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(float)))) {
    throw FormatError(path + ": payload truncated, expected " +
                      std::to_string(n * static_cast<Index>(sizeof(float))) +
                      " bytes, got " + std::to_string(is.gcount()));
  }
  ArrayXd out(n);
  for (Index i = 0; i < n; ++i) out(i) = static_cast<double>(buf[static_cast<size_t>(i)]);
  return out;
}

void check_trailing(std::istream& is, const std::string& path) {
  if (is.peek() != EOF) {
    throw FormatError(path + ": trailing bytes after payload");
  }
}

}  // namespace

void write_volume(const std::string& path, const Volume& volume) {
  if (volume.rank() != 3) shape_error("write_volume: volume must be [D,H,W]");
  auto os = open_out(path);
  write_rvf_header(os, 0, volume.shape());
  write_f32_payload(os, volume.array());
  if (!os) throw FormatError(path + ": write failed");
}

Volume read_volume(const std::string& path) {
  auto is = open_in(path);
  Shape dims = read_rvf_header(is, path, 0);
  ArrayXd data = read_f32_payload(is, path, numel(dims));
  check_trailing(is, path);
  return Volume(std::move(dims), std::move(data));
}

void write_labels(const std::string& path, const LabelMap& labels) {
  if (labels.rank() != 3) shape_error("write_labels: labels must be [D,H,W]");
  auto os = open_out(path);
  write_rvf_header(os, 1, labels.shape());
  // u16 payload, little-endian (native on every supported target)
  os.write(reinterpret_cast<const char*>(labels.array().data()),
           static_cast<std::streamsize>(labels.size() * sizeof(std::uint16_t)));
  if (!os) throw FormatError(path + ": write failed");
}

LabelMap read_labels(const std::string& path) {
  auto is = open_in(path);
  Shape dims = read_rvf_header(is, path, 1);
  const Index n = numel(dims);
  std::vector<std::uint16_t> buf(static_cast<size_t>(n));
  if (!is.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(std::uint16_t)))) {
    throw FormatError(path + ": payload truncated, expected " +
                      std::to_string(n * 2) + " bytes, got " +
                      std::to_string(is.gcount()));
  }
  check_trailing(is, path);
  LabelMap out(dims);
  auto& arr = out.array_mut();
  for (Index i = 0; i < n; ++i) arr(i) = buf[static_cast<size_t>(i)];
  return out;
}

void write_field(const std::string& path, const DeformationField& field) {
  if (field.rank() != 4 || field.dim(0) != 3) {
    shape_error("write_field: field must be [3,D,H,W]");
  }
  auto os = open_out(path);
  Shape dims{field.dim(1), field.dim(2), field.dim(3)};
  write_rvf_header(os, 2, dims);
  write_f32_payload(os, field.array());
  if (!os) throw FormatError(path + ": write failed");
}

DeformationField read_field(const std::string& path) {
  auto is = open_in(path);
  Shape dims = read_rvf_header(is, path, 2);
  ArrayXd data = read_f32_payload(is, path, 3 * numel(dims));
  check_trailing(is, path);
  return DeformationField(Shape{3, dims[0], dims[1], dims[2]},
                          std::move(data));
}

std::string config_to_text(const NetworkConfig& config) {
  std::ostringstream os;
  os.precision(17);
  os << "stages=" << config.stages << "\n";
  os << "channels=";
  for (size_t i = 0; i < config.channels.size(); ++i) {
    if (i) os << ",";
    os << config.channels[i];
  }
  os << "\n";
  os << "stride_k=";
  for (size_t i = 0; i < config.stride_k.size(); ++i) {
    if (i) os << ",";
    os << config.stride_k[i];
  }
  os << "\n";
  os << "bottleneck_d=" << config.bottleneck_d << "\n";
  os << "lncc_window=" << config.lncc_window << "\n";
  os << "lambda_reg=" << config.lambda_reg << "\n";
  os << "lr=" << config.lr << "\n";
  return os.str();
}

namespace {

std::vector<Index> parse_index_list(const std::string& text) {
  std::vector<Index> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    out.push_back(static_cast<Index>(std::stoll(item)));
  }
  return out;
}

}  // namespace

NetworkConfig config_from_text(const std::string& text) {
  NetworkConfig config;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError("config: malformed line '" + line + "'");
    }
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "stages") {
      config.stages = static_cast<Index>(std::stoll(value));
    } else if (key == "channels") {
      config.channels = parse_index_list(value);
    } else if (key == "stride_k") {
      config.stride_k = parse_index_list(value);
    } else if (key == "bottleneck_d") {
      config.bottleneck_d = static_cast<Index>(std::stoll(value));
    } else if (key == "lncc_window") {
      config.lncc_window = static_cast<Index>(std::stoll(value));
    } else if (key == "lambda_reg") {
      config.lambda_reg = std::stod(value);
    } else if (key == "lr") {
      config.lr = std::stod(value);
    } else {
      throw FormatError("config: unknown key '" + key + "'");
    }
  }
  return config;
}

void write_checkpoint(const std::string& path, RegistrationModel& model) {
  auto os = open_out(path);
  os.write("HSGK", 4);
  const std::string config = config_to_text(model.config);
  write_u32(os, static_cast<std::uint32_t>(config.size()));
  os.write(config.data(), static_cast<std::streamsize>(config.size()));
  for (const NamedParam& p : model.named_params()) {
    write_u32(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const Shape& shape = p.tensor->shape();
    write_u32(os, static_cast<std::uint32_t>(shape.size()));
    for (Index d : shape) write_u32(os, static_cast<std::uint32_t>(d));
    // f64 payload, little-endian (native on every supported target)
    os.write(reinterpret_cast<const char*>(p.tensor->array().data()),
             static_cast<std::streamsize>(p.tensor->size() * sizeof(double)));
  }
  if (!os) throw FormatError(path + ": write failed");
}

RegistrationModel read_checkpoint(const std::string& path) {
  auto is = open_in(path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "HSGK", 4) != 0) {
    throw FormatError(path + ": bad checkpoint magic (expected HSGK)");
  }
  const std::uint32_t config_len = read_u32(is, path);
  std::string config_text(config_len, '\0');
  if (!is.read(config_text.data(), config_len)) {
    throw FormatError(path + ": truncated config block");
  }
  NetworkConfig config = config_from_text(config_text);
  RegistrationModel model = build_model(config, 0);

  for (const NamedParam& p : model.named_params()) {
    const std::uint32_t name_len = read_u32(is, path);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) {
      throw FormatError(path + ": truncated tensor name");
    }
    if (name != p.name) {
      throw FormatError(path + ": expected tensor '" + p.name + "', found '" +
                        name + "'");
    }
    const std::uint32_t rank = read_u32(is, path);
    Shape shape(rank);
    for (std::uint32_t i = 0; i < rank; ++i) {
      shape[i] = static_cast<Index>(read_u32(is, path));
    }
    if (shape != p.tensor->shape()) {
      throw FormatError(path + ": shape mismatch for tensor '" + name + "'");
    }
    ArrayXd data(numel(shape));
    if (!is.read(reinterpret_cast<char*>(data.data()),
                 static_cast<std::streamsize>(data.size() * sizeof(double)))) {
      throw FormatError(path + ": truncated payload for tensor '" + name +
                        "'");
    }
    *p.tensor = Tensor(shape, std::move(data));
  }
  check_trailing(is, path);
  return model;
}

}  // namespace voxreg
