#include "dhi/profiler.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dhi/error.hpp"

namespace dhi {

std::size_t ModelProfile::total_params() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.params;
  return n;
}

std::uint64_t ModelProfile::total_flops() const {
  std::uint64_t n = 0;
  for (const auto& l : layers) n += l.flops;
  return n;
}

std::uint64_t conv_flops(std::size_t out_h, std::size_t out_w, std::size_t out_c, std::size_t in_c,
                         std::size_t kernel) {
  return 2ull * out_h * out_w * out_c * in_c * kernel * kernel;
}

LayerProfile profile_conv(const std::string& name, const Conv2dLayer& conv, std::size_t in_h, std::size_t in_w) {
  const std::size_t k = conv.weight.dim(2);
  const auto ah = conv_axis(in_h, k, conv.stride, conv.padding);
  const auto aw = conv_axis(in_w, k, conv.stride, conv.padding);
  const std::size_t out_c = conv.weight.dim(0);
  return {name, "conv" + std::to_string(k) + "x" + std::to_string(k), {ah.out, aw.out, out_c}, conv.param_count(),
          conv_flops(ah.out, aw.out, out_c, conv.weight.dim(1), k)};
}

namespace {

std::uint64_t weighting_cost(WeightingKind kind) {
  // per neighbour: difference plus the kernel's own arithmetic
  switch (kind) {
    case WeightingKind::InverseMultiquadric: return 6;  // sub, mul, square, add, sqrt, div
    case WeightingKind::Gaussian: return 4;             // sub, mul, square, exp
    case WeightingKind::Triangular: return 2;           // sub, sub
    case WeightingKind::WendlandC2: return 8;
  }
  return 0;
}

struct Cursor {
  std::size_t h, w, c;
};

void add_hyper(ModelProfile& p, const std::string& prefix, const HyperNetwork& net, const Cursor& at,
               std::size_t kernel, std::size_t groups, BatchNormLayer const& bn1, BatchNormLayer const& bn2) {
  auto l1 = profile_conv(prefix + ".n1.0", net.layer1, at.h, at.w);
  auto l2 = profile_conv(prefix + ".n1.1", net.layer2, at.h, at.w);
  auto l3 = profile_conv(prefix + ".n1.2", net.layer3, at.h, at.w);
  const std::uint64_t px = static_cast<std::uint64_t>(at.h) * at.w;
  p.layers.push_back(l1);
  p.layers.push_back({prefix + ".n1.bn0", "batchnorm", l1.output, bn1.param_count(), 2 * px * l1.output[2]});
  p.layers.push_back(l2);
  p.layers.push_back({prefix + ".n1.bn1", "batchnorm", l2.output, bn2.param_count(), 2 * px * l2.output[2]});
  p.layers.push_back(l3);
  const std::uint64_t e = l3.output[2];
  const std::uint64_t taps = kernel * kernel;
  p.layers.push_back({prefix + ".n2", "kernel projection", {at.h, at.w, taps * groups},
                      net.n2.param_count(), px * (e + 2 * e * taps)});
}

}  // namespace

ModelProfile profile_model(const Detector& model) {
  const auto& cfg = model.config();
  ModelProfile p;
  const std::size_t f = cfg.kernel_size, g = cfg.groups;
  const std::uint64_t taps = f * f;
  Cursor at{cfg.input_size, cfg.input_size, 3};
  const std::uint64_t px = static_cast<std::uint64_t>(at.h) * at.w;

  // RGB stream
  add_hyper(p, "rgb.hyper", model.rgb_hyper, at, f, g, model.rgb_hyper.bn1, model.rgb_hyper.bn2);
  p.layers.push_back({"rgb.depth_weighting", "weight field", {at.h, at.w, taps}, 0,
                      px * taps * weighting_cost(cfg.weighting.kind) + px * taps * g});
  p.layers.push_back({"rgb.involution", "involution", {at.h, at.w, 3}, 0, 2 * px * 3 * taps});
  const std::size_t ph = (at.h - 2) / 2 + 1, pw = (at.w - 2) / 2 + 1;
  p.layers.push_back({"rgb.pool", "maxpool", {ph, pw, 3}, 0, 0});

  // depth stream
  p.layers.push_back({"depth.scale", "scale", {at.h, at.w, 1}, 0, px});
  add_hyper(p, "depth.hyper", model.depth_hyper, at, f, g, model.depth_hyper.bn1, model.depth_hyper.bn2);
  p.layers.push_back({"depth.involution", "involution", {at.h, at.w, 3}, 0, 2 * px * 3 * taps});
  p.layers.push_back({"depth.pool", "maxpool", {ph, pw, 3}, 0, 0});

  // fusion
  at = {ph, pw, 3};
  const std::uint64_t fpx = static_cast<std::uint64_t>(ph) * pw * 3;
  p.layers.push_back(profile_conv("fusion.residual", model.fusion.residual, at.h, at.w));
  p.layers.push_back({"fusion.add", "add", {ph, pw, 3}, 0, 2 * fpx});
  p.layers.push_back(profile_conv("fusion.encoder", model.fusion.encoder, at.h * model.fusion.config().upsample_factor,
                                  at.w * model.fusion.config().upsample_factor));
  {
    const auto& dec = model.fusion.decoder;
    const std::size_t k = dec.weight.dim(2);
    const std::size_t out_c = dec.weight.dim(1);
    p.layers.push_back({"fusion.decoder", "tconv" + std::to_string(k) + "x" + std::to_string(k),
                        {ph, pw, out_c}, dec.param_count(), conv_flops(ph, pw, out_c, dec.weight.dim(0), k)});
  }
  p.layers.push_back({"fusion.skip", "add", {ph, pw, 3}, 0, fpx});

  // backbone
  for (std::size_t i = 0; i < model.backbone.size(); ++i) {
    const std::string base = "backbone." + std::to_string(i);
    auto conv = profile_conv(base + ".conv", model.backbone[i], at.h, at.w);
    at = {conv.output[0], conv.output[1], conv.output[2]};
    p.layers.push_back(conv);
    p.layers.push_back({base + ".bn", "batchnorm", conv.output, model.backbone_bn[i].param_count(),
                        2ull * at.h * at.w * at.c});
    if (std::find(cfg.pool_after.begin(), cfg.pool_after.end(), i + 1) != cfg.pool_after.end()) {
      at.h = (at.h - 2) / 2 + 1;
      at.w = (at.w - 2) / 2 + 1;
      p.layers.push_back({base + ".pool", "maxpool", {at.h, at.w, at.c}, 0, 0});
    }
  }
  p.layers.push_back(profile_conv("head", model.head, at.h, at.w));
  return p;
}

ComparisonTable parameter_comparison(const std::vector<OperatorKind>& kinds, const std::vector<std::size_t>& kernel_sizes,
                                     std::size_t in_channels, std::size_t filters, std::size_t groups) {
  ComparisonTable t;
  t.kernel_sizes = kernel_sizes;
  for (auto kind : kinds) {
    for (const char* count : {"trainable", "stored"}) {
      ComparisonRow row{std::string(to_string(kind)), count, {}};
      for (auto f : kernel_sizes) {
        OperatorConfig oc{kind, in_channels, filters, f, groups};
        row.values.push_back(std::string_view(count) == "trainable" ? count_params(oc) : count_stored_params(oc));
      }
      t.rows.push_back(std::move(row));
    }
  }
  return t;
}

void write_comparison_csv(const std::filesystem::path& path, const ComparisonTable& table) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << "operator,count";
  for (auto f : table.kernel_sizes) os << ",F=" << f;
  os << '\n';
  for (const auto& r : table.rows) {
    os << r.operator_name << ',' << r.count;
    for (auto v : r.values) os << ',' << v;
    os << '\n';
  }
}

ComparisonTable read_comparison_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    return cells;
  };
  ComparisonTable t;
  std::string line;
  if (!std::getline(is, line)) throw DataError("empty comparison CSV " + path.string());
  const auto header = split(line);
  if (header.size() < 2 || header[0] != "operator" || header[1] != "count") {
    throw DataError("unexpected comparison CSV header in " + path.string());
  }
  try {
    for (std::size_t i = 2; i < header.size(); ++i) {
      if (header[i].rfind("F=", 0) != 0) throw DataError("bad column " + header[i]);
      t.kernel_sizes.push_back(std::stoul(header[i].substr(2)));
    }
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto cells = split(line);
      if (cells.size() != header.size()) throw DataError("ragged comparison CSV row: " + line);
      ComparisonRow r{cells[0], cells[1], {}};
      for (std::size_t i = 2; i < cells.size(); ++i) r.values.push_back(std::stoul(cells[i]));
      t.rows.push_back(std::move(r));
    }
  } catch (const std::logic_error&) {
    throw DataError("non-integer value in " + path.string());
  }
  return t;
}

std::string format_comparison(const ComparisonTable& table) {
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-30s %-10s", "operator", "count");
  os << buf;
  for (auto f : table.kernel_sizes) {
    std::snprintf(buf, sizeof buf, " %8s", ("F=" + std::to_string(f)).c_str());
    os << buf;
  }
  os << '\n';
  for (const auto& r : table.rows) {
    std::snprintf(buf, sizeof buf, "%-30s %-10s", r.operator_name.c_str(), r.count.c_str());
    os << buf;
    for (auto v : r.values) {
      std::snprintf(buf, sizeof buf, " %8zu", v);
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

void write_profile_csv(const std::filesystem::path& path, const ModelProfile& profile) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << "layer,kind,out_h,out_w,out_c,params,flops\n";
  for (const auto& l : profile.layers) {
    os << l.name << ',' << l.kind << ',' << l.output[0] << ',' << l.output[1] << ',' << l.output[2] << ',' << l.params
       << ',' << l.flops << '\n';
  }
  os << "total,,,,," << profile.total_params() << ',' << profile.total_flops() << '\n';
}

std::string format_profile(const ModelProfile& profile) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-26s %-18s %-16s %12s %16s\n", "layer", "kind", "output", "params", "FLOPs");
  os << buf;
  for (const auto& l : profile.layers) {
    std::snprintf(buf, sizeof buf, "%-26s %-18s %-16s %12zu %16llu\n", l.name.c_str(), l.kind.c_str(),
                  (std::to_string(l.output[0]) + "x" + std::to_string(l.output[1]) + "x" + std::to_string(l.output[2]))
                      .c_str(),
                  l.params, static_cast<unsigned long long>(l.flops));
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "%-26s %-18s %-16s %12zu %16llu\n", "total", "", "", profile.total_params(),
                static_cast<unsigned long long>(profile.total_flops()));
  os << buf;
  return os.str();
}

}  // namespace dhi
