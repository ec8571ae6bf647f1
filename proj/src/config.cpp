#include "casc/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace casc {

namespace pt = boost::property_tree;

int64_t CascConfig::condition_channels() const {
  return channel::condition_channels_for(channel.cr, codec.image_size, codec.latent_size());
}

ldm::UNetConfig CascConfig::unet_config() const {
  ldm::UNetConfig u;
  u.in_channels = codec.c_lat;
  u.condition_channels = condition_channels();
  u.grid_size = codec.latent_size();
  u.condition_grid = codec.latent_size();
  u.base_channels = ldm.base_channels;
  u.channel_mult = ldm.channel_mult;
  u.attention_level = ldm.attention_level;
  return u;
}

void CascConfig::validate() const {
  codec.validate();
  unet_config().validate();
  if (train.epochs < 1 || train.batch_size < 1) throw ConfigError("train: epochs and batch_size must be >= 1");
  if (train.stage1_lr <= 0 || train.stage2_lr <= 0) throw ConfigError("train: learning rates must be positive");
  if (!train.snr_db && train.snr_grid_db.empty()) throw ConfigError("train: empty SNR grid");
}

namespace {

std::vector<int64_t> parse_int_list(const std::string& text) {
  std::vector<int64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoll(item));
  return out;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  return out;
}

bool parse_bool(const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError("not a boolean: '" + text + "'");
}

class SectionReader {
 public:
  SectionReader(const pt::ptree& root, const std::string& name) : name_(name) {
    if (auto child = root.get_child_optional(name)) tree_ = *child;
  }
  /// Rejects keys that no read() call consumed.
  void finish() const {
    for (const auto& [key, value] : tree_) {
      if (!used_.count(key)) throw ConfigError("unknown key [" + name_ + "] " + key);
    }
  }
  template <typename F>
  void read(const std::string& key, F&& apply) {
    used_.insert(key);
    if (auto v = tree_.get_optional<std::string>(key)) {
      try {
        apply(*v);
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        throw ConfigError("bad value for [" + name_ + "] " + key + ": " + *v);
      }
    }
  }

 private:
  std::string name_;
  pt::ptree tree_;
  std::set<std::string> used_;
};

}  // namespace

CascConfig parse_config(const std::string& text) {
  pt::ptree root;
  std::istringstream in(text);
  try {
    pt::read_ini(in, root);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  static const std::set<std::string> kSections{"codec", "channel", "can", "ldm", "train", "eval"};
  for (const auto& [name, child] : root) {
    if (!kSections.count(name)) throw ConfigError("unknown config section [" + name + "]");
  }

  CascConfig cfg;
  {
    SectionReader s(root, "codec");
    auto& c = cfg.codec;
    s.read("image_size", [&](auto& v) { c.image_size = std::stoll(v); });
    s.read("base_channels", [&](auto& v) { c.base_channels = std::stoll(v); });
    s.read("downsample_stages", [&](auto& v) { c.downsample_stages = std::stoll(v); });
    s.read("c_lat", [&](auto& v) { c.c_lat = std::stoll(v); });
    s.read("codebook_size", [&](auto& v) { c.codebook_size = std::stoll(v); });
    s.read("channel_mult", [&](auto& v) { c.channel_mult = parse_int_list(v); });
    s.read("num_res_blocks", [&](auto& v) { c.num_res_blocks = std::stoll(v); });
    s.read("use_adversarial_term", [&](auto& v) { c.use_adversarial_term = parse_bool(v); });
    s.read("vq_beta", [&](auto& v) { c.vq_beta = std::stod(v); });
    s.read("vq_weight", [&](auto& v) { c.vq_weight = std::stod(v); });
    s.read("perceptual_weight", [&](auto& v) { c.perceptual_weight = std::stod(v); });
    s.read("adversarial_weight", [&](auto& v) { c.adversarial_weight = std::stod(v); });
    s.finish();
  }
  {
    SectionReader s(root, "channel");
    s.read("cr", [&](auto& v) { cfg.channel.cr = channel::Rational::parse(v); });
    s.read("snr_db", [&](auto& v) { cfg.channel.snr_db = std::stod(v); });
    s.read("seed", [&](auto& v) { cfg.channel.seed = std::stoull(v); });
    s.finish();
  }
  {
    SectionReader s(root, "can");
    s.read("enabled", [&](auto& v) { cfg.can_enabled = parse_bool(v); });
    s.finish();
  }
  {
    SectionReader s(root, "ldm");
    auto& l = cfg.ldm;
    s.read("steps", [&](auto& v) { l.steps = std::stoll(v); });
    s.read("beta_start", [&](auto& v) { l.beta_start = std::stod(v); });
    s.read("beta_end", [&](auto& v) { l.beta_end = std::stod(v); });
    s.read("base_channels", [&](auto& v) { l.base_channels = std::stoll(v); });
    s.read("channel_mult", [&](auto& v) { l.channel_mult = parse_int_list(v); });
    s.read("attention_level", [&](auto& v) { l.attention_level = std::stoll(v); });
    s.finish();
  }
  {
    SectionReader s(root, "train");
    auto& t = cfg.train;
    s.read("stage1_lr", [&](auto& v) { t.stage1_lr = std::stod(v); });
    s.read("stage2_lr", [&](auto& v) { t.stage2_lr = std::stod(v); });
    s.read("epochs", [&](auto& v) { t.epochs = std::stoll(v); });
    s.read("batch_size", [&](auto& v) { t.batch_size = std::stoll(v); });
    s.read("seed", [&](auto& v) { t.seed = std::stoull(v); });
    s.read("snr_db", [&](auto& v) {
      if (v == "sampled") t.snr_db.reset();
      else t.snr_db = std::stod(v);
    });
    s.read("snr_grid_db", [&](auto& v) { t.snr_grid_db = parse_double_list(v); });
    s.read("eval_images", [&](auto& v) { t.eval_images = std::stoll(v); });
    s.finish();
  }
  {
    SectionReader s(root, "eval");
    auto& e = cfg.eval;
    s.read("asset_dir", [&](auto& v) { e.asset_dir = v; });
    s.read("allow_uncalibrated", [&](auto& v) { e.allow_uncalibrated = parse_bool(v); });
    s.read("lpips_sha256", [&](auto& v) { e.lpips_sha256 = v; });
    s.read("fid_sha256", [&](auto& v) { e.fid_sha256 = v; });
    s.read("n_images", [&](auto& v) { e.n_images = std::stoll(v); });
    s.finish();
  }
  cfg.validate();
  return cfg;
}

CascConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

nlohmann::json to_json(const CascConfig& cfg) {
  nlohmann::json j;
  const auto& c = cfg.codec;
  j["codec"] = {{"image_size", c.image_size},
                {"base_channels", c.base_channels},
                {"downsample_stages", c.downsample_stages},
                {"c_lat", c.c_lat},
                {"codebook_size", c.codebook_size},
                {"channel_mult", c.channel_mult},
                {"num_res_blocks", c.num_res_blocks},
                {"use_adversarial_term", c.use_adversarial_term},
                {"vq_beta", c.vq_beta},
                {"vq_weight", c.vq_weight},
                {"perceptual_weight", c.perceptual_weight},
                {"adversarial_weight", c.adversarial_weight}};
  j["channel"] = {{"cr", cfg.channel.cr.str()}, {"snr_db", cfg.channel.snr_db}, {"seed", cfg.channel.seed}};
  j["can"] = {{"enabled", cfg.can_enabled}};
  const auto& l = cfg.ldm;
  j["ldm"] = {{"steps", l.steps},
              {"beta_start", l.beta_start},
              {"beta_end", l.beta_end},
              {"base_channels", l.base_channels},
              {"channel_mult", l.channel_mult},
              {"attention_level", l.attention_level}};
  const auto& t = cfg.train;
  j["train"] = {{"stage1_lr", t.stage1_lr},
                {"stage2_lr", t.stage2_lr},
                {"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"seed", t.seed},
                {"snr_db", t.snr_db ? nlohmann::json(*t.snr_db) : nlohmann::json("sampled")},
                {"snr_grid_db", t.snr_grid_db},
                {"eval_images", t.eval_images}};
  const auto& e = cfg.eval;
  j["eval"] = {{"asset_dir", e.asset_dir},
               {"allow_uncalibrated", e.allow_uncalibrated},
               {"lpips_sha256", e.lpips_sha256},
               {"fid_sha256", e.fid_sha256},
               {"n_images", e.n_images}};
  return j;
}

CascConfig config_from_json(const nlohmann::json& j) {
  CascConfig cfg;
  try {
    const auto& c = j.at("codec");
    cfg.codec.image_size = c.at("image_size");
    cfg.codec.base_channels = c.at("base_channels");
    cfg.codec.downsample_stages = c.at("downsample_stages");
    cfg.codec.c_lat = c.at("c_lat");
    cfg.codec.codebook_size = c.at("codebook_size");
    cfg.codec.channel_mult = c.at("channel_mult").get<std::vector<int64_t>>();
    cfg.codec.num_res_blocks = c.at("num_res_blocks");
    cfg.codec.use_adversarial_term = c.at("use_adversarial_term");
    cfg.codec.vq_beta = c.at("vq_beta");
    cfg.codec.vq_weight = c.at("vq_weight");
    cfg.codec.perceptual_weight = c.at("perceptual_weight");
    cfg.codec.adversarial_weight = c.at("adversarial_weight");
    const auto& ch = j.at("channel");
    cfg.channel.cr = channel::Rational::parse(ch.at("cr").get<std::string>());
    cfg.channel.snr_db = ch.at("snr_db");
    cfg.channel.seed = ch.at("seed");
    cfg.can_enabled = j.at("can").at("enabled");
    const auto& l = j.at("ldm");
    cfg.ldm.steps = l.at("steps");
    cfg.ldm.beta_start = l.at("beta_start");
    cfg.ldm.beta_end = l.at("beta_end");
    cfg.ldm.base_channels = l.at("base_channels");
    cfg.ldm.channel_mult = l.at("channel_mult").get<std::vector<int64_t>>();
    cfg.ldm.attention_level = l.at("attention_level");
    const auto& t = j.at("train");
    cfg.train.stage1_lr = t.at("stage1_lr");
    cfg.train.stage2_lr = t.at("stage2_lr");
    cfg.train.epochs = t.at("epochs");
    cfg.train.batch_size = t.at("batch_size");
    cfg.train.seed = t.at("seed");
    if (t.at("snr_db").is_number()) cfg.train.snr_db = t.at("snr_db").get<double>();
    cfg.train.snr_grid_db = t.at("snr_grid_db").get<std::vector<double>>();
    cfg.train.eval_images = t.at("eval_images");
    const auto& e = j.at("eval");
    cfg.eval.asset_dir = e.at("asset_dir");
    cfg.eval.allow_uncalibrated = e.at("allow_uncalibrated");
    cfg.eval.lpips_sha256 = e.at("lpips_sha256");
    cfg.eval.fid_sha256 = e.at("fid_sha256");
    cfg.eval.n_images = e.at("n_images");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config manifest: ") + e.what());
  }
  return cfg;
}

}  // namespace casc
