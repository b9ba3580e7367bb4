#include "voxreg/runconfig.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace voxreg {

namespace {

std::vector<Index> parse_index_list(const std::string& text,
                                    const std::string& key) {
  std::vector<Index> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(static_cast<Index>(std::stoll(item)));
    } catch (const std::exception&) {
      throw std::invalid_argument("config key '" + key +
                                  "': bad integer '" + item + "'");
    }
  }
  if (out.empty()) {
    throw std::invalid_argument("config key '" + key + "': empty list");
  }
  return out;
}

Index parse_index(const std::string& value, const std::string& key) {
  try {
    return static_cast<Index>(std::stoll(value));
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "': bad integer '" +
                                value + "'");
  }
}

double parse_double(const std::string& value, const std::string& key) {
  try {
    return std::stod(value);
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "': bad number '" +
                                value + "'");
  }
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "stages") {
    network.stages = parse_index(value, key);
  } else if (key == "channels") {
    network.channels = parse_index_list(value, key);
  } else if (key == "stride_k") {
    network.stride_k = parse_index_list(value, key);
  } else if (key == "bottleneck_d") {
    network.bottleneck_d = parse_index(value, key);
  } else if (key == "lncc_window") {
    network.lncc_window = parse_index(value, key);
  } else if (key == "lambda_reg") {
    network.lambda_reg = parse_double(value, key);
  } else if (key == "lr") {
    network.lr = parse_double(value, key);
  } else if (key == "sim") {
    sim = sim_kind_from_string(value);
  } else if (key == "seed") {
    seed = static_cast<std::uint64_t>(parse_index(value, key));
  } else if (key == "epochs") {
    epochs = parse_index(value, key);
  } else if (key == "dims") {
    dims = parse_index(value, key);
  } else if (key == "pairs") {
    pairs = parse_index(value, key);
  } else if (key == "amplitude") {
    amplitude = parse_double(value, key);
  } else if (key == "smoothness") {
    smoothness = parse_double(value, key);
  } else {
    throw std::invalid_argument("unknown config key '" + key + "'");
  }
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) {
    throw std::runtime_error("cannot open config file '" + path + "'");
  }
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    // trim
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": expected key=value, got '" + line + "'");
    }
    set(line.substr(0, eq), line.substr(eq + 1));
  }
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "stages=" << network.stages << "\n";
  os << "channels=";
  for (size_t i = 0; i < network.channels.size(); ++i) {
    if (i) os << ",";
    os << network.channels[i];
  }
  os << "\nstride_k=";
  for (size_t i = 0; i < network.stride_k.size(); ++i) {
    if (i) os << ",";
    os << network.stride_k[i];
  }
  os << "\nbottleneck_d=" << network.bottleneck_d;
  os << "\nlncc_window=" << network.lncc_window;
  os << "\nlambda_reg=" << network.lambda_reg;
  os << "\nlr=" << network.lr;
  os << "\nsim=" << to_string(sim);
  os << "\nseed=" << seed;
  os << "\nepochs=" << epochs;
  os << "\ndims=" << dims;
  os << "\npairs=" << pairs;
  os << "\namplitude=" << amplitude;
  os << "\nsmoothness=" << smoothness << "\n";
  return os.str();
}

void write_effective_config(const RunConfig& config, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::string path = dir + "/config.effective.txt";
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << config.to_text();
}

}  // namespace voxreg
