#include "maskint/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

#include "maskint/binary_io.hpp"
#include "maskint/errors.hpp"

namespace maskint {

void DataConfig::Validate() const {
  if (clips == 0) throw ConfigError("data.clips must be positive");
  if (frames < 2) throw ConfigError("data.frames must be at least 2");
  if (height < 8 || width < 8) throw ConfigError("data.height and data.width must be >= 8");
  if (min_shapes == 0 || min_shapes > max_shapes) {
    throw ConfigError("data.min_shapes must be in [1, data.max_shapes]");
  }
  if (!(edge_threshold >= 0.0 && edge_threshold <= 1.0)) {
    throw ConfigError("data.edge_threshold must lie in [0, 1]");
  }
}

void TokenizerConfig::Validate() const {
  if (color_size == 0 || structure_size == 0) throw ConfigError("tokenizer sizes must be positive");
  if (patch == 0) throw ConfigError("tokenizer.patch must be positive");
  if (max_iters == 0) throw ConfigError("tokenizer.max_iters must be positive");
}

RunConfig::RunConfig() { decode.anchors = {0, model.frames - 1}; }

void RunConfig::Validate() const {
  data.Validate();
  tokenizer.Validate();
  model.Validate();
  train.Validate();
  decode.Validate(model.frames);
  if (model.color_vocab != tokenizer.color_size ||
      model.structure_vocab != tokenizer.structure_size) {
    throw ConfigError("model vocabularies must match the tokenizer sizes");
  }
  if (data.height % tokenizer.patch != 0 || data.width % tokenizer.patch != 0) {
    throw ConfigError("data.height and data.width must be multiples of tokenizer.patch");
  }
  if (data.height / tokenizer.patch != model.token_rows ||
      data.width / tokenizer.patch != model.token_cols) {
    throw ConfigError("model token grid must equal the frame size divided by tokenizer.patch");
  }
}

namespace {

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T ParseInteger(const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("expected a non-negative integer, got '" + v + "'");
  return out;
}

double ParseDouble(const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError("expected a number, got '" + v + "'");
  return out;
}

bool ParseBool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("expected true or false, got '" + v + "'");
}

std::string FormatDouble(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::size_t> ParseIndexList(const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(ParseInteger<std::size_t>(Trim(item)));
  if (out.empty()) throw ConfigError("expected a comma-separated index list");
  return out;
}

template <typename T>
Field SizeField(T RunConfig::*group, std::size_t T::*member) {
  return {[=](RunConfig& c, const std::string& v) { (c.*group).*member = ParseInteger<std::size_t>(v); },
          [=](const RunConfig& c) { return std::to_string((c.*group).*member); }};
}

template <typename T>
Field DoubleField(T RunConfig::*group, double T::*member) {
  return {[=](RunConfig& c, const std::string& v) { (c.*group).*member = ParseDouble(v); },
          [=](const RunConfig& c) { return FormatDouble((c.*group).*member); }};
}

template <typename T>
Field U64Field(T RunConfig::*group, std::uint64_t T::*member) {
  return {[=](RunConfig& c, const std::string& v) {
            (c.*group).*member = ParseInteger<std::uint64_t>(v);
          },
          [=](const RunConfig& c) { return std::to_string((c.*group).*member); }};
}

template <typename T>
Field ScheduleField(T RunConfig::*group, MaskScheduleKind T::*member) {
  return {[=](RunConfig& c, const std::string& v) { (c.*group).*member = ParseMaskSchedule(v); },
          [=](const RunConfig& c) { return std::string(MaskScheduleName((c.*group).*member)); }};
}

const std::map<std::string, Field>& Fields() {
  using R = RunConfig;
  static const std::map<std::string, Field> fields = [] {
    std::map<std::string, Field> f;
    f["seed"] = {[](R& c, const std::string& v) { c.seed = ParseInteger<std::uint64_t>(v); },
                 [](const R& c) { return std::to_string(c.seed); }};

    f["data.clips"] = SizeField(&R::data, &DataConfig::clips);
    f["data.frames"] = SizeField(&R::data, &DataConfig::frames);
    f["data.height"] = SizeField(&R::data, &DataConfig::height);
    f["data.width"] = SizeField(&R::data, &DataConfig::width);
    f["data.min_shapes"] = SizeField(&R::data, &DataConfig::min_shapes);
    f["data.max_shapes"] = SizeField(&R::data, &DataConfig::max_shapes);
    f["data.edge_threshold"] = DoubleField(&R::data, &DataConfig::edge_threshold);

    f["tokenizer.color_size"] = SizeField(&R::tokenizer, &TokenizerConfig::color_size);
    f["tokenizer.structure_size"] = SizeField(&R::tokenizer, &TokenizerConfig::structure_size);
    f["tokenizer.patch"] = SizeField(&R::tokenizer, &TokenizerConfig::patch);
    f["tokenizer.max_iters"] = SizeField(&R::tokenizer, &TokenizerConfig::max_iters);

    f["model.frames"] = SizeField(&R::model, &ModelConfig::frames);
    f["model.token_rows"] = SizeField(&R::model, &ModelConfig::token_rows);
    f["model.token_cols"] = SizeField(&R::model, &ModelConfig::token_cols);
    f["model.color_vocab"] = SizeField(&R::model, &ModelConfig::color_vocab);
    f["model.structure_vocab"] = SizeField(&R::model, &ModelConfig::structure_vocab);
    f["model.embed_dim"] = SizeField(&R::model, &ModelConfig::embed_dim);
    f["model.heads"] = SizeField(&R::model, &ModelConfig::heads);
    f["model.layers"] = SizeField(&R::model, &ModelConfig::layers);
    f["model.window_rows"] = SizeField(&R::model, &ModelConfig::window_rows);
    f["model.window_cols"] = SizeField(&R::model, &ModelConfig::window_cols);
    f["model.conv_factor"] = SizeField(&R::model, &ModelConfig::conv_factor);
    f["model.structure_dropout"] = DoubleField(&R::model, &ModelConfig::structure_dropout);

    f["train.batch_size"] = SizeField(&R::train, &TrainConfig::batch_size);
    f["train.steps"] = SizeField(&R::train, &TrainConfig::steps);
    f["train.learning_rate"] = DoubleField(&R::train, &TrainConfig::learning_rate);
    f["train.min_learning_rate_fraction"] =
        DoubleField(&R::train, &TrainConfig::min_learning_rate_fraction);
    f["train.warmup_steps"] = SizeField(&R::train, &TrainConfig::warmup_steps);
    f["train.weight_decay"] = DoubleField(&R::train, &TrainConfig::weight_decay);
    f["train.beta1"] = DoubleField(&R::train, &TrainConfig::beta1);
    f["train.beta2"] = DoubleField(&R::train, &TrainConfig::beta2);
    f["train.grad_clip"] = DoubleField(&R::train, &TrainConfig::grad_clip);
    f["train.structure_dropout"] = DoubleField(&R::train, &TrainConfig::structure_dropout);
    f["train.schedule"] = ScheduleField(&R::train, &TrainConfig::schedule);

    f["decode.steps"] = SizeField(&R::decode, &DecodeConfig::steps);
    f["decode.temperature"] = DoubleField(&R::decode, &DecodeConfig::temperature);
    f["decode.schedule"] = ScheduleField(&R::decode, &DecodeConfig::schedule);
    f["decode.drop_structure"] = {
        [](R& c, const std::string& v) { c.decode.drop_structure = ParseBool(v); },
        [](const R& c) { return std::string(c.decode.drop_structure ? "true" : "false"); }};
    f["decode.anchors"] = {[](R& c, const std::string& v) { c.decode.anchors = ParseIndexList(v); },
                           [](const R& c) {
                             std::string s;
                             for (std::size_t i = 0; i < c.decode.anchors.size(); ++i) {
                               if (i) s += ',';
                               s += std::to_string(c.decode.anchors[i]);
                             }
                             return s;
                           }};

    f["bench.repeats"] = SizeField(&R::bench, &BenchConfig::repeats);
    return f;
  }();
  return fields;
}

// Applies key=value lines; returns whether decode.anchors was set.
bool Apply(RunConfig& config, const std::string& text, const std::string& prefix) {
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  bool anchors_set = false;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = Trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(number) + ": expected key = value");
    }
    const std::string key = Trim(line.substr(0, eq));
    const std::string value = Trim(line.substr(eq + 1));
    const auto& fields = Fields();
    const auto it = fields.find(key);
    if (it == fields.end() || key.rfind(prefix, 0) != 0) {
      throw ConfigError("line " + std::to_string(number) + ": unknown key '" + key + "'");
    }
    if (auto [s, inserted] = seen.emplace(key, number); !inserted) {
      throw ConfigError("line " + std::to_string(number) + ": duplicate key '" + key +
                        "' (first set on line " + std::to_string(s->second) + ")");
    }
    try {
      it->second.set(config, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(number) + ": " + key + ": " + e.what());
    }
    if (key == "decode.anchors") anchors_set = true;
  }
  return anchors_set;
}

}  // namespace

RunConfig ParseRunConfig(const std::string& text) {
  RunConfig config;
  if (!Apply(config, text, "")) config.decode.anchors = {0, config.model.frames - 1};
  config.Validate();
  return config;
}

RunConfig LoadRunConfig(const std::filesystem::path& path) {
  const auto bytes = io::ReadFile(path);
  try {
    return ParseRunConfig(std::string(bytes.begin(), bytes.end()));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string FormatRunConfig(const RunConfig& config) {
  std::string out;
  for (const auto& [key, field] : Fields()) out += key + " = " + field.get(config) + "\n";
  return out;
}

std::string FormatModelConfig(const ModelConfig& config) {
  RunConfig c;
  c.model = config;
  std::string out;
  for (const auto& [key, field] : Fields()) {
    if (key.rfind("model.", 0) == 0) out += key + " = " + field.get(c) + "\n";
  }
  return out;
}

ModelConfig ParseModelConfig(const std::string& text) {
  RunConfig c;
  Apply(c, text, "model.");
  c.model.Validate();
  return c.model;
}

}  // namespace maskint
