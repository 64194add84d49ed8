#include "cfkin/report.hpp"

#include <openssl/evp.h>
#include <unistd.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <memory>

#include <fmt/format.h>

#include "cfkin/error.hpp"

namespace cfkin::report {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ---------------------------------------------------------------------------
// full-precision helpers (intermediates)

nlohmann::json exact(double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(); }
double exact_from(const nlohmann::json& j) { return j.is_null() ? kNaN : j.get<double>(); }

nlohmann::json optional_exact(const std::optional<double>& x) { return x ? exact(*x) : nlohmann::json(); }
std::optional<double> optional_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

nlohmann::json features_to_json(const kinematics::KinematicFeatures& f) {
  return {{"v_rel", exact(f.v_rel)},
          {"ttc", optional_exact(f.ttc)},
          {"gap_closing_rate", exact(f.gap_closing_rate)},
          {"a_req", exact(f.a_req)},
          {"leader_braking_flag", f.leader_braking_flag},
          {"ttc_inv", optional_exact(f.ttc_inv)},
          {"imputed_ttc", f.imputed_ttc},
          {"imputed_ttc_inv", f.imputed_ttc_inv}};
}

kinematics::KinematicFeatures features_from_json(const nlohmann::json& j) {
  kinematics::KinematicFeatures f;
  f.v_rel = exact_from(j.at("v_rel"));
  f.ttc = optional_from(j.at("ttc"));
  f.gap_closing_rate = exact_from(j.at("gap_closing_rate"));
  f.a_req = exact_from(j.at("a_req"));
  f.leader_braking_flag = j.at("leader_braking_flag").get<int>();
  f.ttc_inv = optional_from(j.at("ttc_inv"));
  f.imputed_ttc = j.at("imputed_ttc").get<bool>();
  f.imputed_ttc_inv = j.at("imputed_ttc_inv").get<bool>();
  return f;
}

// ---------------------------------------------------------------------------
// emission helpers

std::string dump(const ojson& j) { return j.dump(2) + "\n"; }

std::string opt6(const std::optional<double>& x) { return x ? format6(*x) : std::string(); }

ojson rounded_array(std::span<const double> xs) {
  auto a = ojson::array();
  for (double x : xs) a.push_back(number6(x));
  return a;
}

std::string threshold_key(double t) { return format6(t); }

const std::array<std::string_view, 9> kProfileColumns = {"v_rel",   "ttc",     "gap_closing_rate",
                                                         "a_req",   "ttc_inv", "leader_braking_flag",
                                                         "spacing", "ego_speed_onset", "leader_speed_onset"};

ojson filter_stats_json(const ingest::FilterStats& s) {
  ojson j;
  j["raw_count"] = s.raw_count;
  ojson rejected;
  for (std::size_t i = 0; i < ingest::kCriterionCount; ++i)
    rejected[std::string(ingest::criterion_name(static_cast<ingest::Criterion>(i)))] = s.rejected[i];
  j["rejected"] = std::move(rejected);
  j["total_rejected"] = s.total_rejected();
  j["retained_count"] = s.retained_count;
  j["retained_vehicles"] = s.retained_vehicles;
  j["retained_pct"] = number6(s.raw_count ? 100.0 * static_cast<double>(s.retained_count) / static_cast<double>(s.raw_count) : 0.0);
  return j;
}

ojson feature_summary_json(const kinematics::FeatureSummary& s) {
  ojson j;
  j["observations"] = s.observations;
  j["imputation"] = {{"ttc_median", number6(s.medians.ttc)},
                     {"ttc_inv_median", number6(s.medians.ttc_inv)},
                     {"ttc_defined", s.medians.ttc_defined},
                     {"ttc_inv_defined", s.medians.ttc_inv_defined}};
  j["closing_ttc_median"] = s.closing_ttc_median ? number6(*s.closing_ttc_median) : ojson();
  auto feats = ojson::array();
  for (const auto& f : s.features) {
    ojson o;
    o["name"] = f.name;
    o["count"] = f.count;
    o["mean"] = number6(f.mean);
    o["sd"] = number6(f.sd);
    o["median"] = number6(f.median);
    o["imputation_rate"] = number6(f.imputation_rate);
    o["bins"] = f.histogram.counts.size();
    o["histogram_file"] = "histogram_" + f.name + ".csv";
    feats.push_back(std::move(o));
  }
  j["features"] = std::move(feats);
  return j;
}

std::string histogram_csv(const kinematics::Histogram& h) {
  std::string s = "bin_lower,bin_upper,count\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i)
    s += fmt::format("{},{},{}\n", format6(h.edges[i]), format6(h.edges[i + 1]), h.counts[i]);
  return s;
}

ojson census_json(const events::CensusReport& c) {
  ojson j;
  j["valid_observations"] = c.valid_observations;
  j["min_sample"] = c.min_sample;
  auto cells = ojson::array();
  for (const auto& cell : c.cells) {
    ojson o;
    o["threshold"] = number6(cell.threshold);
    o["min_duration"] = number6(cell.min_duration);
    o["count"] = cell.count;
    o["pct_valid"] = number6(cell.pct_valid);
    const double n = static_cast<double>(cell.count);
    auto pct = [&](std::size_t k) { return number6(cell.count ? 100.0 * static_cast<double>(k) / n : 0.0); };
    o["severity"] = {{"mild", cell.mild}, {"moderate", cell.moderate}, {"hard", cell.hard}};
    o["severity_pct"] = {{"mild", pct(cell.mild)}, {"moderate", pct(cell.moderate)}, {"hard", pct(cell.hard)}};
    o["insufficient"] = cell.insufficient;
    cells.push_back(std::move(o));
  }
  j["cells"] = std::move(cells);
  return j;
}

ojson event_report_json(const events::DecelerationEvent& e) {
  ojson o;
  o["event_id"] = e.id();
  o["site"] = e.site_tag;
  o["vehicle_id"] = e.vehicle_id;
  o["leader_id"] = e.leader_id;
  o["onset_frame"] = e.onset_frame;
  o["length_frames"] = e.length_frames;
  o["duration_s"] = number6(e.duration_s);
  o["mean_decel"] = number6(e.mean_decel);
  o["max_decel"] = number6(e.max_decel);
  o["severity"] = std::string(events::severity_name(e.severity));
  o["context"] = std::string(events::context_name(e.context));
  const auto& f = e.onset_features;
  o["onset"] = {{"v_rel", number6(f.v_rel)},
                {"ttc", f.ttc ? number6(*f.ttc) : ojson()},
                {"gap_closing_rate", number6(f.gap_closing_rate)},
                {"a_req", number6(f.a_req)},
                {"leader_braking_flag", f.leader_braking_flag},
                {"ttc_inv", f.ttc_inv ? number6(*f.ttc_inv) : ojson()},
                {"imputed_ttc", f.imputed_ttc},
                {"spacing", number6(e.onset_spacing)},
                {"ego_speed", number6(e.ego_speed_onset)},
                {"leader_speed", number6(e.leader_speed_onset)}};
  return o;
}

std::string events_csv(const pipeline::Collected& c) {
  std::string s =
      "threshold,min_duration,event_id,site,vehicle_id,leader_id,onset_frame,length_frames,duration_s,mean_decel,"
      "max_decel,severity,context,v_rel,ttc,gap_closing_rate,a_req,leader_braking_flag,ttc_inv,imputed_ttc,spacing,"
      "ego_speed,leader_speed\n";
  for (const auto& [cfg, evts] : c.grid) {
    for (const auto& e : evts) {
      const auto& f = e.onset_features;
      s += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                       format6(cfg.accel_threshold), format6(cfg.min_duration), e.id(), e.site_tag, e.vehicle_id,
                       e.leader_id, e.onset_frame, e.length_frames, format6(e.duration_s), format6(e.mean_decel),
                       format6(e.max_decel), events::severity_name(e.severity), events::context_name(e.context),
                       format6(f.v_rel), opt6(f.ttc), format6(f.gap_closing_rate), format6(f.a_req),
                       f.leader_braking_flag, opt6(f.ttc_inv), f.imputed_ttc ? 1 : 0, format6(e.onset_spacing),
                       format6(e.ego_speed_onset), format6(e.leader_speed_onset));
    }
  }
  return s;
}

ojson events_json(const pipeline::Collected& c) {
  auto cells = ojson::array();
  for (const auto& [cfg, evts] : c.grid) {
    ojson o;
    o["threshold"] = number6(cfg.accel_threshold);
    o["min_duration"] = number6(cfg.min_duration);
    auto list = ojson::array();
    for (const auto& e : evts) list.push_back(event_report_json(e));
    o["events"] = std::move(list);
    cells.push_back(std::move(o));
  }
  return ojson{{"cells", std::move(cells)}};
}

ojson onset_profiles_json(const pipeline::Collected& c, const pipeline::PipelineConfig& config) {
  auto out = ojson::array();
  for (const auto& [cfg, evts] : c.grid) {
    if (!events::same_value(cfg.min_duration, config.analysis_duration)) continue;
    ojson o;
    o["threshold"] = number6(cfg.accel_threshold);
    o["min_duration"] = number6(cfg.min_duration);
    o["n"] = evts.size();
    auto feats = ojson::array();
    for (auto name : kProfileColumns) {
      std::vector<double> v;
      v.reserve(evts.size());
      for (const auto& e : evts) v.push_back(cues::cue_value(e, name));
      ojson f;
      f["feature"] = std::string(name);
      if (v.empty()) {
        f["mean"] = ojson();
        f["median"] = ojson();
      } else {
        const auto d = kinematics::describe(std::string(name), v, {.bins = 1});
        f["mean"] = number6(d.mean);
        f["median"] = number6(d.median);
        f["sd"] = number6(d.sd);
      }
      feats.push_back(std::move(f));
    }
    o["features"] = std::move(feats);
    std::map<std::string, std::size_t> contexts;
    for (const auto& e : evts) ++contexts[std::string(events::context_name(e.context))];
    ojson ctx = ojson::object();
    for (auto ctx_kind : {events::Context::leader_induced, events::Context::close_following, events::Context::free_flow,
                          events::Context::other}) {
      const std::string k(events::context_name(ctx_kind));
      ctx[k] = contexts[k];
    }
    o["contexts"] = std::move(ctx);
    out.push_back(std::move(o));
  }
  return ojson{{"profiles", std::move(out)}};
}

ojson lag_table_json(const pipeline::Analysis& a) {
  auto out = ojson::array();
  for (const auto& ta : a.per_threshold) {
    if (ta.skipped) continue;
    const auto& lt = ta.lag_table;
    ojson o;
    o["threshold"] = number6(ta.threshold);
    o["alpha"] = number6(lt.alpha);
    auto cells = ojson::array();
    for (const auto& c : lt.cells) {
      ojson x;
      x["feature"] = c.feature;
      x["lag_s"] = number6(c.lag_s);
      x["available"] = c.available;
      x["n_pairs"] = c.n_pairs;
      if (c.available) {
        x["mean_at_lag"] = number6(c.mean_at_lag);
        x["mean_at_onset"] = number6(c.mean_at_onset);
        x["mean_diff"] = number6(c.test.mean_diff);
        x["t"] = number6(c.test.t);
        x["df"] = number6(c.test.df);
        x["p"] = number6(c.test.p);
        x["cohens_d"] = number6(c.effect.d);
        x["degenerate"] = c.test.degenerate;
        x["significant"] = c.significant;
        x["magnitude"] = std::string(temporal::magnitude_name(c.magnitude));
      }
      cells.push_back(std::move(x));
    }
    o["cells"] = std::move(cells);
    ojson prec = ojson::object();
    for (const auto& p : lt.precedence) prec[p.feature] = p.precedes ? "precedes" : "co-occurs";
    o["precedence"] = std::move(prec);
    auto flag = ojson::array();
    for (const auto& f : lt.flag_activation)
      flag.push_back({{"lag_s", number6(f.lag_s)}, {"n", f.n}, {"rate", number6(f.rate)}});
    o["leader_braking_activation"] = std::move(flag);
    out.push_back(std::move(o));
  }
  return ojson{{"thresholds", std::move(out)}};
}

std::string lag_table_csv(const pipeline::Analysis& a) {
  std::string s = "threshold,feature,lag_s,available,n_pairs,mean_at_lag,mean_at_onset,mean_diff,t,df,p,cohens_d,"
                  "significant,magnitude\n";
  for (const auto& ta : a.per_threshold) {
    if (ta.skipped) continue;
    for (const auto& c : ta.lag_table.cells) {
      if (!c.available) {
        s += fmt::format("{},{},{},0,{},,,,,,,,,\n", format6(ta.threshold), c.feature, format6(c.lag_s), c.n_pairs);
        continue;
      }
      s += fmt::format("{},{},{},1,{},{},{},{},{},{},{},{},{},{}\n", format6(ta.threshold), c.feature,
                       format6(c.lag_s), c.n_pairs, format6(c.mean_at_lag), format6(c.mean_at_onset),
                       format6(c.test.mean_diff), format6(c.test.t), format6(c.test.df), format6(c.test.p),
                       format6(c.effect.d), c.significant ? 1 : 0, temporal::magnitude_name(c.magnitude));
    }
  }
  return s;
}

ojson matrix_json(const cluster::Matrix& m) {
  auto rows = ojson::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    auto r = ojson::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) r.push_back(number6(m(i, k)));
    rows.push_back(std::move(r));
  }
  return rows;
}

ojson cluster_metrics_json(const pipeline::Analysis& a) {
  auto out = ojson::array();
  for (const auto& ta : a.per_threshold) {
    ojson o;
    o["threshold"] = number6(ta.threshold);
    o["n_events"] = ta.n_events;
    o["skipped"] = ta.skipped;
    if (ta.skipped) {
      o["skip_reason"] = ta.skip_reason;
      out.push_back(std::move(o));
      continue;
    }
    const auto& st = ta.standardized;
    o["columns"] = st.columns;
    o["dropped_columns"] = st.dropped;
    o["standardization"] = {{"mean", rounded_array(st.mean)}, {"sd", rounded_array(st.sd)}};
    auto per_k = ojson::array();
    for (const auto& k : ta.clustering.per_k)
      per_k.push_back({{"k", k.k},
                       {"silhouette", number6(k.silhouette)},
                       {"davies_bouldin", number6(k.davies_bouldin)},
                       {"calinski_harabasz", number6(k.calinski_harabasz)},
                       {"inertia", number6(k.inertia)}});
    o["per_k"] = std::move(per_k);
    o["selected_k"] = ta.clustering.selected_k;
    o["rationale"] = std::string(cluster::rationale_name(ta.clustering.rationale));
    const auto& sel = ta.clustering.selected();
    o["centroids_standardized"] = matrix_json(sel.centroids);
    cluster::Matrix original = sel.centroids;
    for (Eigen::Index c = 0; c < original.cols(); ++c)
      original.col(c) = original.col(c).array() * st.sd[static_cast<std::size_t>(c)] + st.mean[static_cast<std::size_t>(c)];
    o["centroids_original"] = matrix_json(original);
    std::vector<std::string> warnings = st.warnings;
    warnings.insert(warnings.end(), ta.clustering.warnings.begin(), ta.clustering.warnings.end());
    for (const auto& k : ta.clustering.per_k) warnings.insert(warnings.end(), k.warnings.begin(), k.warnings.end());
    o["warnings"] = warnings;
    out.push_back(std::move(o));
  }
  return ojson{{"thresholds", std::move(out)}};
}

std::string assignments_csv(const pipeline::Analysis& a) {
  std::string s = "threshold,event_id,cluster\n";
  for (const auto& ta : a.per_threshold) {
    if (ta.skipped) continue;
    const auto& labels = ta.clustering.selected().labels;
    for (std::size_t i = 0; i < ta.events.size(); ++i)
      s += fmt::format("{},{},{}\n", format6(ta.threshold), ta.events[i].id(), labels[i]);
  }
  return s;
}

ojson profiles_json(const pipeline::Analysis& a) {
  auto out = ojson::array();
  for (const auto& ta : a.per_threshold) {
    if (ta.skipped) continue;
    ojson o;
    o["threshold"] = number6(ta.threshold);
    o["k"] = ta.clustering.selected_k;
    auto clusters = ojson::array();
    for (const auto& p : ta.profiles) {
      ojson c;
      c["cluster"] = p.cluster;
      c["size"] = p.size;
      c["share_pct"] = number6(p.share_pct);
      c["label"] = p.label;
      ojson means;
      for (const auto& [name, v] : p.means) means[name] = number6(v);
      c["means"] = std::move(means);
      c["ttc_applicable"] = p.ttc_applicable;
      c["leader_braking_pct"] = number6(p.leader_braking_pct);
      ojson ctx = ojson::object();
      for (const auto& [name, n] : p.contexts) ctx[name] = n;
      c["contexts"] = std::move(ctx);
      clusters.push_back(std::move(c));
    }
    o["clusters"] = std::move(clusters);
    out.push_back(std::move(o));
  }
  return ojson{{"thresholds", std::move(out)}};
}

ojson cues_json(const pipeline::Analysis& a) {
  auto out = ojson::array();
  for (const auto& ta : a.per_threshold) {
    if (ta.skipped) continue;
    ojson o;
    o["threshold"] = number6(ta.threshold);
    o["k"] = ta.clustering.selected_k;
    auto rows = ojson::array();
    for (const auto& r : ta.cues)
      rows.push_back({{"rank", r.rank},
                      {"feature", r.feature},
                      {"eta_squared", number6(r.anova.eta_squared)},
                      {"f", number6(r.anova.f)},
                      {"p", number6(r.anova.p)},
                      {"df_between", r.anova.df_between},
                      {"df_within", r.anova.df_within},
                      {"effect", std::string(cues::effect_name(r.effect))},
                      {"reversal", r.reversal}});
    o["rows"] = std::move(rows);
    out.push_back(std::move(o));
  }
  return ojson{{"thresholds", std::move(out)}};
}

std::string cues_csv(const pipeline::Analysis& a) {
  std::string s = "threshold,rank,feature,eta_squared,f,p,effect,reversal\n";
  for (const auto& ta : a.per_threshold) {
    if (ta.skipped) continue;
    for (const auto& r : ta.cues)
      s += fmt::format("{},{},{},{},{},{},{},{}\n", format6(ta.threshold), r.rank, r.feature,
                       format6(r.anova.eta_squared), format6(r.anova.f), format6(r.anova.p),
                       cues::effect_name(r.effect), r.reversal ? 1 : 0);
  }
  return s;
}

std::string pca_csv(const pipeline::Analysis& a) {
  std::string s = "threshold,event_id,cluster,pc1,pc2,pc3\n";
  for (const auto& ta : a.per_threshold) {
    if (ta.skipped) continue;
    const auto& labels = ta.clustering.selected().labels;
    for (std::size_t i = 0; i < ta.events.size(); ++i) {
      s += fmt::format("{},{},{}", format6(ta.threshold), ta.events[i].id(), labels[i]);
      for (Eigen::Index c = 0; c < 3; ++c)
        s += "," + (c < ta.pca.scores.cols() ? format6(ta.pca.scores(static_cast<Eigen::Index>(i), c)) : std::string());
      s += "\n";
    }
  }
  return s;
}

ojson pca_meta_json(const pipeline::ThresholdAnalysis& ta) {
  ojson o;
  o["eigenvalues"] = rounded_array(ta.pca.eigenvalues);
  o["explained_ratio"] = rounded_array(ta.pca.explained_ratio);
  auto loadings = ojson::array();
  for (Eigen::Index c = 0; c < ta.pca.components.cols(); ++c) {
    ojson l;
    for (Eigen::Index r = 0; r < ta.pca.components.rows(); ++r)
      l[ta.standardized.columns[static_cast<std::size_t>(r)]] = number6(ta.pca.components(r, c));
    loadings.push_back(std::move(l));
  }
  o["loadings"] = std::move(loadings);
  o["warnings"] = ta.pca.warnings;
  return o;
}

ojson radar_json(const pipeline::Analysis& a) {
  auto out = ojson::array();
  for (const auto& ta : a.per_threshold) {
    if (ta.skipped) continue;
    ojson o;
    o["threshold"] = number6(ta.threshold);
    o["axes"] = std::vector<std::string>(cues::kRadarAxes.begin(), cues::kRadarAxes.end());
    auto clusters = ojson::array();
    for (const auto& r : ta.radar) {
      ojson c;
      c["cluster"] = r.cluster;
      ojson vals;
      for (const auto& [name, v] : r.values) vals[name] = number6(v);
      c["values"] = std::move(vals);
      clusters.push_back(std::move(c));
    }
    o["clusters"] = std::move(clusters);
    o["pca"] = pca_meta_json(ta);
    out.push_back(std::move(o));
  }
  return ojson{{"thresholds", std::move(out)}};
}

ojson recovery_json(const pipeline::Analysis& a) {
  auto out = ojson::array();
  for (const auto& ta : a.per_threshold) {
    ojson o;
    o["threshold"] = number6(ta.threshold);
    o["skipped"] = ta.skipped;
    if (!ta.skipped) {
      o["selected_k"] = ta.clustering.selected_k;
      o["adjusted_rand_index"] = ta.ari ? number6(*ta.ari) : ojson();
    }
    out.push_back(std::move(o));
  }
  return ojson{{"thresholds", std::move(out)}};
}

std::string features_csv(const pipeline::Collected& c) {
  std::string s = "segment,site,vehicle_id,leader_id,frame,v_rel,ttc,gap_closing_rate,a_req,leader_braking_flag,ttc_inv,"
                  "imputed_ttc,imputed_ttc_inv\n";
  for (std::size_t i = 0; i < c.segments.size(); ++i) {
    const auto& seg = c.segments[i];
    for (std::size_t k = 0; k < seg.features.size(); ++k) {
      const auto& f = seg.features[k];
      s += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{}\n", i, seg.segment.site_tag, seg.segment.vehicle_id,
                       seg.segment.leader_id, seg.segment.observations[k].timestamp_index, format6(f.v_rel),
                       opt6(f.ttc), format6(f.gap_closing_rate), format6(f.a_req), f.leader_braking_flag,
                       opt6(f.ttc_inv), f.imputed_ttc ? 1 : 0, f.imputed_ttc_inv ? 1 : 0);
    }
  }
  return s;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  out.close();
  if (!out) throw ConfigError("failed writing " + path.string());
}

bool is_replaceable(const fs::path& out) {
  if (!fs::exists(out)) return true;
  if (!fs::is_directory(out)) return false;
  return fs::is_empty(out) || fs::exists(out / "run_manifest.json");
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1)
    throw std::runtime_error("sha256 failed");
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

std::string format6(double x) {
  if (std::isnan(x)) return "NaN";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  if (x == 0.0) return "0";
  return fmt::format("{:.6g}", x);
}

nlohmann::ordered_json number6(double x) {
  if (!std::isfinite(x)) return format6(x);
  return std::stod(fmt::format("{:.6g}", x)) + 0.0;
}

Bundle build_bundle(const pipeline::Collected& c, const pipeline::Analysis& a, const pipeline::PipelineConfig& config,
                    bool census_only) {
  Bundle b;
  b["filter_stats.json"] = dump(filter_stats_json(c.filter_stats));
  b["feature_summary.json"] = dump(feature_summary_json(c.summary));
  for (const auto& f : c.summary.features) b["histogram_" + f.name + ".csv"] = histogram_csv(f.histogram);
  b["event_census.json"] = dump(census_json(c.census));
  b["events.csv"] = events_csv(c);
  b["events.json"] = dump(events_json(c));
  b["onset_profiles.json"] = dump(onset_profiles_json(c, config));
  if (!census_only) {
    b["lag_table.json"] = dump(lag_table_json(a));
    b["lag_table.csv"] = lag_table_csv(a);
    b["cluster_metrics.json"] = dump(cluster_metrics_json(a));
    b["cluster_assignments.csv"] = assignments_csv(a);
    b["cluster_profiles.json"] = dump(profiles_json(a));
    b["cue_importance.json"] = dump(cues_json(a));
    b["cue_importance.csv"] = cues_csv(a);
    b["pca_coords.csv"] = pca_csv(a);
    b["radar_data.json"] = dump(radar_json(a));
    if (c.truth) b["synth_recovery.json"] = dump(recovery_json(a));
  }
  if (c.truth) b["synth_truth.json"] = dump(ojson(synth::truth_to_json(*c.truth)));
  b["intermediates.json"] = intermediates_to_json(c, config).dump() + "\n";
  if (config.dump_features && !c.segments.empty()) b["features.csv"] = features_csv(c);

  ojson m;
  m["tool"] = "cfkin";
  m["version"] = pipeline::kVersion;
  m["mode"] = census_only ? "census" : "run";
  m["seed"] = config.seed;
  m["config"] = ojson::parse(pipeline::config_to_json(config).dump());
  auto inputs = ojson::array();
  std::string joined;
  for (const auto& in : c.inputs) {
    inputs.push_back({{"name", in.name}, {"sha256", in.sha256}});
    joined += in.name + ":" + in.sha256 + "\n";
  }
  m["inputs"] = std::move(inputs);
  m["input_digest"] = sha256_hex(joined);
  auto skips = ojson::array();
  for (const auto& ta : a.per_threshold)
    if (ta.skipped) skips.push_back({{"threshold", number6(ta.threshold)}, {"reason", ta.skip_reason}});
  m["skips"] = std::move(skips);
  auto files = ojson::array();
  for (const auto& [name, content] : b)
    files.push_back({{"name", name}, {"bytes", content.size()}, {"sha256", sha256_hex(content)}});
  m["files"] = std::move(files);
  b["run_manifest.json"] = dump(m);
  return b;
}

void check_writable(const fs::path& out) {
  const auto abs = fs::absolute(out);
  if (!is_replaceable(abs))
    throw ConfigError("output path " + out.string() + " exists and is not an empty directory or a previous bundle");
  fs::path parent = abs.parent_path();
  while (!parent.empty() && !fs::exists(parent)) parent = parent.parent_path();
  if (parent.empty() || !fs::is_directory(parent) || ::access(parent.c_str(), W_OK | X_OK) != 0)
    throw ConfigError("output directory " + out.string() + " is not writable");
}

void write_bundle(const Bundle& bundle, const fs::path& out) {
  check_writable(out);
  const auto abs = fs::absolute(out).lexically_normal();
  const auto parent = abs.parent_path();
  const auto tmp = parent / ("." + abs.filename().string() + ".partial");
  try {
    fs::create_directories(parent);
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    for (const auto& [name, content] : bundle)
      if (name != "run_manifest.json") write_file(tmp / name, content);
    write_file(tmp / "run_manifest.json", bundle.at("run_manifest.json"));
    if (fs::exists(abs)) fs::remove_all(abs);
    fs::rename(tmp, abs);
  } catch (const fs::filesystem_error& e) {
    std::error_code ignored;
    fs::remove_all(tmp, ignored);
    throw ConfigError(std::string("cannot write bundle: ") + e.what());
  } catch (...) {
    std::error_code ignored;
    fs::remove_all(tmp, ignored);
    throw;
  }
}

nlohmann::json event_to_json(const events::DecelerationEvent& e) {
  nlohmann::json j;
  j["segment_index"] = e.segment_index;
  j["onset_index"] = e.onset_index;
  j["onset_frame"] = e.onset_frame;
  j["site_tag"] = e.site_tag;
  j["vehicle_id"] = e.vehicle_id;
  j["leader_id"] = e.leader_id;
  j["accel_threshold"] = e.accel_threshold;
  j["min_duration"] = e.min_duration;
  j["length_frames"] = e.length_frames;
  j["duration_s"] = e.duration_s;
  j["mean_decel"] = e.mean_decel;
  j["max_decel"] = e.max_decel;
  j["severity"] = std::string(events::severity_name(e.severity));
  j["context"] = std::string(events::context_name(e.context));
  j["onset_features"] = features_to_json(e.onset_features);
  j["onset_spacing"] = e.onset_spacing;
  j["ego_speed_onset"] = e.ego_speed_onset;
  j["leader_speed_onset"] = e.leader_speed_onset;
  auto lagged = nlohmann::json::array();
  for (const auto& l : e.lagged)
    lagged.push_back({{"lag_s", l.lag_s}, {"features", l.features ? features_to_json(*l.features) : nlohmann::json()}});
  j["lagged"] = std::move(lagged);
  return j;
}

events::DecelerationEvent event_from_json(const nlohmann::json& j) {
  events::DecelerationEvent e;
  e.segment_index = j.at("segment_index").get<std::size_t>();
  e.onset_index = j.at("onset_index").get<std::size_t>();
  e.onset_frame = j.at("onset_frame").get<std::int64_t>();
  e.site_tag = j.at("site_tag").get<std::string>();
  e.vehicle_id = j.at("vehicle_id").get<std::int64_t>();
  e.leader_id = j.at("leader_id").get<std::int64_t>();
  e.accel_threshold = j.at("accel_threshold").get<double>();
  e.min_duration = j.at("min_duration").get<double>();
  e.length_frames = j.at("length_frames").get<std::size_t>();
  e.duration_s = j.at("duration_s").get<double>();
  e.mean_decel = j.at("mean_decel").get<double>();
  e.max_decel = j.at("max_decel").get<double>();
  e.severity = events::parse_severity(j.at("severity").get<std::string>());
  e.context = events::parse_context(j.at("context").get<std::string>());
  e.onset_features = features_from_json(j.at("onset_features"));
  e.onset_spacing = j.at("onset_spacing").get<double>();
  e.ego_speed_onset = j.at("ego_speed_onset").get<double>();
  e.leader_speed_onset = j.at("leader_speed_onset").get<double>();
  for (const auto& l : j.at("lagged")) {
    events::LaggedFeatures lf;
    lf.lag_s = l.at("lag_s").get<double>();
    if (!l.at("features").is_null()) lf.features = features_from_json(l.at("features"));
    e.lagged.push_back(std::move(lf));
  }
  return e;
}

nlohmann::json intermediates_to_json(const pipeline::Collected& c, const pipeline::PipelineConfig& config) {
  nlohmann::json j;
  j["config"] = pipeline::config_to_json(config);
  const auto& s = c.filter_stats;
  j["filter_stats"] = {{"raw_count", s.raw_count},
                       {"rejected", s.rejected},
                       {"retained_count", s.retained_count},
                       {"retained_vehicles", s.retained_vehicles}};
  const auto& fs_ = c.summary;
  nlohmann::json summary;
  summary["observations"] = fs_.observations;
  summary["closing_ttc_median"] = optional_exact(fs_.closing_ttc_median);
  summary["medians"] = {{"ttc", fs_.medians.ttc},
                        {"ttc_inv", fs_.medians.ttc_inv},
                        {"ttc_defined", fs_.medians.ttc_defined},
                        {"ttc_inv_defined", fs_.medians.ttc_inv_defined}};
  auto feats = nlohmann::json::array();
  for (const auto& f : fs_.features) {
    nlohmann::json edges = nlohmann::json::array();
    for (double e : f.histogram.edges) edges.push_back(exact(e));
    feats.push_back({{"name", f.name},
                     {"count", f.count},
                     {"mean", exact(f.mean)},
                     {"sd", exact(f.sd)},
                     {"median", exact(f.median)},
                     {"imputation_rate", exact(f.imputation_rate)},
                     {"edges", std::move(edges)},
                     {"counts", f.histogram.counts}});
  }
  summary["features"] = std::move(feats);
  j["summary"] = std::move(summary);

  auto grid = nlohmann::json::array();
  for (const auto& [cfg, evts] : c.grid) {
    auto list = nlohmann::json::array();
    for (const auto& e : evts) list.push_back(event_to_json(e));
    grid.push_back({{"threshold", cfg.accel_threshold},
                    {"min_duration", cfg.min_duration},
                    {"dip_tolerance_frames", cfg.dip_tolerance_frames},
                    {"events", std::move(list)}});
  }
  j["grid"] = std::move(grid);

  auto cells = nlohmann::json::array();
  for (const auto& cell : c.census.cells)
    cells.push_back({{"threshold", cell.threshold},
                     {"min_duration", cell.min_duration},
                     {"count", cell.count},
                     {"pct_valid", cell.pct_valid},
                     {"mild", cell.mild},
                     {"moderate", cell.moderate},
                     {"hard", cell.hard},
                     {"insufficient", cell.insufficient}});
  j["census"] = {{"valid_observations", c.census.valid_observations},
                 {"min_sample", c.census.min_sample},
                 {"cells", std::move(cells)}};
  j["truth"] = c.truth ? synth::truth_to_json(*c.truth) : nlohmann::json();
  auto inputs = nlohmann::json::array();
  for (const auto& in : c.inputs) inputs.push_back({{"name", in.name}, {"sha256", in.sha256}});
  j["inputs"] = std::move(inputs);
  return j;
}

std::pair<pipeline::Collected, pipeline::PipelineConfig> intermediates_from_json(const nlohmann::json& j) {
  pipeline::Collected c;
  pipeline::PipelineConfig config;
  try {
    config = pipeline::config_from_json(j.at("config"));
    const auto& s = j.at("filter_stats");
    c.filter_stats.raw_count = s.at("raw_count").get<std::uint64_t>();
    c.filter_stats.rejected = s.at("rejected").get<std::array<std::uint64_t, ingest::kCriterionCount>>();
    c.filter_stats.retained_count = s.at("retained_count").get<std::uint64_t>();
    c.filter_stats.retained_vehicles = s.at("retained_vehicles").get<std::uint64_t>();

    const auto& sm = j.at("summary");
    c.summary.observations = sm.at("observations").get<std::size_t>();
    c.summary.closing_ttc_median = optional_from(sm.at("closing_ttc_median"));
    const auto& md = sm.at("medians");
    c.summary.medians.ttc = md.at("ttc").get<double>();
    c.summary.medians.ttc_inv = md.at("ttc_inv").get<double>();
    c.summary.medians.ttc_defined = md.at("ttc_defined").get<std::size_t>();
    c.summary.medians.ttc_inv_defined = md.at("ttc_inv_defined").get<std::size_t>();
    for (const auto& f : sm.at("features")) {
      kinematics::FeatureStats fs_;
      fs_.name = f.at("name").get<std::string>();
      fs_.count = f.at("count").get<std::size_t>();
      fs_.mean = exact_from(f.at("mean"));
      fs_.sd = exact_from(f.at("sd"));
      fs_.median = exact_from(f.at("median"));
      fs_.imputation_rate = exact_from(f.at("imputation_rate"));
      for (const auto& e : f.at("edges")) fs_.histogram.edges.push_back(exact_from(e));
      fs_.histogram.counts = f.at("counts").get<std::vector<std::size_t>>();
      c.summary.features.push_back(std::move(fs_));
    }

    for (const auto& g : j.at("grid")) {
      events::EventConfig ec;
      ec.accel_threshold = g.at("threshold").get<double>();
      ec.min_duration = g.at("min_duration").get<double>();
      ec.dip_tolerance_frames = g.at("dip_tolerance_frames").get<int>();
      std::vector<events::DecelerationEvent> evts;
      for (const auto& e : g.at("events")) evts.push_back(event_from_json(e));
      c.grid.emplace_back(ec, std::move(evts));
    }

    const auto& cs = j.at("census");
    c.census.valid_observations = cs.at("valid_observations").get<std::size_t>();
    c.census.min_sample = cs.at("min_sample").get<std::size_t>();
    for (const auto& cell : cs.at("cells")) {
      events::CensusCell x;
      x.threshold = cell.at("threshold").get<double>();
      x.min_duration = cell.at("min_duration").get<double>();
      x.count = cell.at("count").get<std::size_t>();
      x.pct_valid = cell.at("pct_valid").get<double>();
      x.mild = cell.at("mild").get<std::size_t>();
      x.moderate = cell.at("moderate").get<std::size_t>();
      x.hard = cell.at("hard").get<std::size_t>();
      x.insufficient = cell.at("insufficient").get<bool>();
      c.census.cells.push_back(x);
    }
    if (!j.at("truth").is_null()) c.truth = synth::truth_from_json(j.at("truth"));
    for (const auto& in : j.at("inputs"))
      c.inputs.push_back({in.at("name").get<std::string>(), in.at("sha256").get<std::string>()});
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed intermediates: ") + e.what());
  }
  return {std::move(c), std::move(config)};
}

}  // namespace cfkin::report
