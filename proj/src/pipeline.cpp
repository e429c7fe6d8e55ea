#include "readmit/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "readmit/checkpoint.hpp"
#include "readmit/dates.hpp"
#include "readmit/errors.hpp"
#include "readmit/labeler.hpp"

namespace fs = std::filesystem;

namespace readmit {

// --- configuration -----------------------------------------------------------------

namespace {

int64_t to_i64(const std::string &key, const std::string &value) {
    try {
        size_t used = 0;
        int64_t v = std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception &) {
        throw InvalidConfig(key + " expects an integer, got '" + value + "'");
    }
}

double to_f64(const std::string &key, const std::string &value) {
    try {
        size_t used = 0;
        double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception &) {
        throw InvalidConfig(key + " expects a number, got '" + value + "'");
    }
}

void set_train_key(TrainConfig &tc, const std::string &key, const std::string &field,
                   const std::string &value) {
    if (field == "batch_size") tc.batch_size = static_cast<int>(to_i64(key, value));
    else if (field == "lr") tc.lr = to_f64(key, value);
    else if (field == "weight_decay") tc.weight_decay = to_f64(key, value);
    else if (field == "beta1") tc.beta1 = to_f64(key, value);
    else if (field == "beta2") tc.beta2 = to_f64(key, value);
    else if (field == "adam_eps") tc.adam_eps = to_f64(key, value);
    else if (field == "warmup_fraction") tc.warmup_fraction = to_f64(key, value);
    else if (field == "max_epochs") tc.max_epochs = static_cast<int>(to_i64(key, value));
    else if (field == "patience") tc.patience = static_cast<int>(to_i64(key, value));
    else if (field == "mask_fraction") tc.mask_fraction = to_f64(key, value);
    else if (field == "corruption") tc.corruption = corruption_from_string(value);
    else if (field == "seed") tc.seed = static_cast<uint64_t>(to_i64(key, value));
    else throw InvalidConfig("unknown configuration key '" + key + "'");
}

void set_one(PipelineConfig &cfg, const std::string &key, const std::string &value) {
    auto dot = key.find('.');
    std::string section = dot == std::string::npos ? key : key.substr(0, dot);
    std::string field = dot == std::string::npos ? "" : key.substr(dot + 1);

    if (section == "cohort") {
        if (field == "n_beneficiaries") cfg.cohort.n_beneficiaries = to_i64(key, value);
        else if (field == "start_date") cfg.cohort.start_date = value;
        else if (field == "end_date") cfg.cohort.end_date = value;
        else if (field == "seed") cfg.cohort.seed = static_cast<uint64_t>(to_i64(key, value));
        else if (field == "base_readmission_rate") cfg.cohort.base_readmission_rate = to_f64(key, value);
        else if (field == "signal_strength") cfg.cohort.signal_strength = to_f64(key, value);
        else if (field == "label_skew") cfg.cohort.label_skew = to_f64(key, value);
        else if (field == "shift_strength") cfg.cohort.shift_strength = to_f64(key, value);
        else if (field == "era_cutoff") cfg.cohort.era_cutoff = value;
        else throw InvalidConfig("unknown configuration key '" + key + "'");
    } else if (section == "encoder") {
        if (field == "n_layers") cfg.encoder.n_layers = static_cast<int>(to_i64(key, value));
        else if (field == "n_heads") cfg.encoder.n_heads = static_cast<int>(to_i64(key, value));
        else if (field == "d_model") cfg.encoder.d_model = static_cast<int>(to_i64(key, value));
        else if (field == "d_ff") cfg.encoder.d_ff = static_cast<int>(to_i64(key, value));
        else if (field == "dropout") cfg.encoder.dropout = to_f64(key, value);
        else throw InvalidConfig("unknown configuration key '" + key + "'");
    } else if (section == "pretrain") {
        set_train_key(cfg.pretrain, key, field, value);
    } else if (section == "finetune") {
        if (field == "init") {
            if (value != "pretrained" && value != "scratch")
                throw InvalidConfig("finetune.init must be 'pretrained' or 'scratch'");
            cfg.finetune_init = value;
        } else {
            set_train_key(cfg.finetune, key, field, value);
        }
    } else if (section == "prep") {
        if (field == "l_max") cfg.l_max = static_cast<int>(to_i64(key, value));
        else if (field == "vocab_cap") cfg.vocab_cap = static_cast<size_t>(to_i64(key, value));
        else if (field == "vocab_min_count") cfg.vocab_min_count = static_cast<int>(to_i64(key, value));
        else if (field == "quantizer_bins") cfg.quantizer_bins = static_cast<int>(to_i64(key, value));
        else if (field == "split_seed") cfg.split_seed = static_cast<uint64_t>(to_i64(key, value));
        else throw InvalidConfig("unknown configuration key '" + key + "'");
    } else if (section == "drift") {
        if (field == "shift_strength") cfg.drift_shift_strength = to_f64(key, value);
        else if (field == "threshold") cfg.drift_threshold = to_f64(key, value);
        else throw InvalidConfig("unknown configuration key '" + key + "'");
    } else if (section == "scale") {
        if (field == "sizes") cfg.scale_sizes = parse_sizes(value);
        else throw InvalidConfig("unknown configuration key '" + key + "'");
    } else {
        throw InvalidConfig("unknown configuration key '" + key + "'");
    }
}

std::string trim(const std::string &s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::string hex16(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void dump_json_file(const std::string &path, const nlohmann::json &j) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw MissingArtifact("cannot open " + path + " for writing");
    f << j.dump(2) << '\n';
}

} // namespace

std::vector<int64_t> parse_sizes(const std::string &csv) {
    std::vector<int64_t> sizes;
    std::string cur;
    auto flush = [&]() {
        if (cur.empty()) return;
        int64_t v = to_i64("scale.sizes", cur);
        if (v < 1) throw InvalidConfig("scale.sizes entries must be positive");
        sizes.push_back(v);
        cur.clear();
    };
    for (char c : csv) {
        if (c == ',') flush();
        else if (!std::isspace(static_cast<unsigned char>(c))) cur.push_back(c);
    }
    flush();
    if (sizes.empty()) throw InvalidConfig("scale.sizes is empty");
    return sizes;
}

PipelineConfig pipeline_config_from_pairs(
    const std::vector<std::pair<std::string, std::string>> &pairs) {
    PipelineConfig cfg;
    for (const auto &[key, value] : pairs) set_one(cfg, key, value);
    return cfg;
}

PipelineConfig load_pipeline_config(const std::string &path) {
    std::ifstream f(path);
    if (!f) throw MissingArtifact("configuration file " + path + " does not exist");
    std::vector<std::pair<std::string, std::string>> pairs;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw InvalidConfig(path + ":" + std::to_string(line_no) +
                                " is not a key=value line: '" + line + "'");
        pairs.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return pipeline_config_from_pairs(pairs);
}

void apply_seed_override(PipelineConfig &cfg, uint64_t seed) {
    cfg.cohort.seed = seed;
    cfg.pretrain.seed = seed;
    cfg.finetune.seed = seed;
    cfg.split_seed = seed;
}

// --- manifest -----------------------------------------------------------------------

uint64_t file_content_hash(const std::string &path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MissingArtifact(path + " does not exist");
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return fnv1a64(bytes);
}

RunManifest RunManifest::load_or_empty(const std::string &run_dir) {
    RunManifest m;
    std::ifstream f(run_dir + "/manifest.json");
    if (!f) return m;
    nlohmann::json j = nlohmann::json::parse(f, nullptr, /*allow_exceptions=*/true);
    nlohmann::json stages = j.value("stages", nlohmann::json::object());
    for (const auto &[stage, body] : stages.items()) {
        nlohmann::json files = body.value("files", nlohmann::json::object());
        for (const auto &[rel, hash] : files.items())
            m.stages_[stage][rel] = hash.get<std::string>();
    }
    return m;
}

void RunManifest::save(const std::string &run_dir) const {
    nlohmann::json stages = nlohmann::json::object();
    for (const auto &[stage, files] : stages_) {
        nlohmann::json fj = nlohmann::json::object();
        for (const auto &[rel, hash] : files) fj[rel] = hash;
        stages[stage] = {{"files", fj}};
    }
    dump_json_file(run_dir + "/manifest.json", {{"stages", stages}});
}

void RunManifest::record_stage(const std::string &stage, const std::string &run_dir,
                               const std::vector<std::string> &rel_paths) {
    std::map<std::string, std::string> files;
    for (const auto &rel : rel_paths)
        files[rel] = hex16(file_content_hash(run_dir + "/" + rel));
    stages_[stage] = std::move(files);
}

void RunManifest::require_stage(const std::string &stage, const std::string &run_dir) const {
    auto it = stages_.find(stage);
    if (it == stages_.end())
        throw MissingArtifact("no '" + stage + "' outputs recorded under " + run_dir +
                              "; run the '" + stage + "' stage first");
    for (const auto &[rel, recorded] : it->second) {
        std::string full = run_dir + "/" + rel;
        uint64_t now;
        try {
            now = file_content_hash(full);
        } catch (const MissingArtifact &) {
            throw MissingArtifact(rel + " recorded by stage '" + stage +
                                  "' is missing from " + run_dir);
        }
        if (hex16(now) != recorded)
            throw HashMismatch(rel + " changed after stage '" + stage + "' recorded it (" +
                               recorded + " -> " + hex16(now) + ")");
    }
}

const std::map<std::string, std::string> &
RunManifest::stage_files(const std::string &stage) const {
    auto it = stages_.find(stage);
    if (it == stages_.end())
        throw MissingArtifact("no '" + stage + "' outputs recorded in the manifest");
    return it->second;
}

// --- stage helpers ------------------------------------------------------------------

namespace {

std::vector<std::string> dir_files_sorted(const std::string &run_dir, const std::string &sub) {
    std::vector<std::string> rel;
    for (const auto &entry : fs::directory_iterator(run_dir + "/" + sub))
        if (entry.is_regular_file()) rel.push_back(sub + "/" + entry.path().filename().string());
    std::sort(rel.begin(), rel.end());
    return rel;
}

EncoderConfig encoder_config_for(const PipelineConfig &cfg, const Vocabulary &vocab) {
    EncoderConfig enc = cfg.encoder;
    enc.vocab_size = static_cast<int>(vocab.size());
    enc.max_len = cfg.l_max;
    enc.n_segments = kNumSegments;
    enc.n_time_buckets = kNumTimeBuckets;
    enc.validate();
    return enc;
}

nlohmann::json history_json(const TrainResult &r) {
    nlohmann::json hist = nlohmann::json::array();
    for (const auto &e : r.history)
        hist.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss},
                        {"val_metric", e.val_metric}});
    return {{"epochs_run", r.epochs_run},
            {"best_epoch", r.best_epoch},
            {"best_val_metric", r.best_val_metric},
            {"history", hist}};
}

struct AssembledCohort {
    std::vector<BeneficiaryTimeline> timelines;
    std::unordered_map<std::string, CountyStats> census;
    std::vector<LabeledInpatientEvent> events; // in timeline order
    LabelSummary summary;
};

AssembledCohort assemble_cohort(LoadedCohort &&loaded) {
    AssembledCohort a;
    a.timelines = build_timelines(loaded.beneficiaries, std::move(loaded.claims));
    a.census = join_census(a.timelines, loaded.counties);
    a.events = label_dataset(a.timelines, &a.summary);
    return a;
}

const CountyStats &county_of(const std::unordered_map<std::string, CountyStats> &census,
                             const std::string &bene) {
    static const CountyStats unknown = CountyStats::unknown();
    auto it = census.find(bene);
    return it == census.end() ? unknown : it->second;
}

// assemble final samples for every labeled event, timeline order
std::vector<LabeledSample> assemble_all_samples(const AssembledCohort &cohort,
                                                const Vocabulary &vocab,
                                                const QuantizerSpec &spec, int l_max) {
    std::unordered_map<std::string, const BeneficiaryTimeline *> by_bene;
    for (const auto &t : cohort.timelines) by_bene[t.beneficiary.beneficiary_id] = &t;
    std::vector<LabeledSample> samples;
    samples.reserve(cohort.events.size());
    for (const auto &ev : cohort.events) {
        const BeneficiaryTimeline &tl = *by_bene.at(ev.beneficiary_id);
        samples.push_back(assemble_sequence(ev, tl, county_of(cohort.census, ev.beneficiary_id),
                                            vocab, spec, l_max));
    }
    return samples;
}

} // namespace

// --- stages --------------------------------------------------------------------------

void run_synth(const std::string &run_dir, const PipelineConfig &cfg) {
    fs::create_directories(run_dir);
    Cohort cohort = generate_cohort(cfg.cohort);
    write_cohort(run_dir + "/cohort", cohort);
    RunManifest m = RunManifest::load_or_empty(run_dir);
    m.record_stage("synth", run_dir, dir_files_sorted(run_dir, "cohort"));
    m.save(run_dir);
}

void run_prep(const std::string &run_dir, const PipelineConfig &cfg) {
    RunManifest m = RunManifest::load_or_empty(run_dir);
    m.require_stage("synth", run_dir);

    AssembledCohort cohort = assemble_cohort(load_cohort_dir(run_dir + "/cohort"));

    // the quantizers and the vocabulary are fitted on training beneficiaries
    // only; validation/test sequences fall back to [UNK] for unseen tokens
    std::unordered_set<std::string> train_benes;
    for (const auto &t : cohort.timelines)
        if (split_of(t.beneficiary.beneficiary_id, cfg.split_seed) == Split::train)
            train_benes.insert(t.beneficiary.beneficiary_id);

    std::unordered_map<std::string, const BeneficiaryTimeline *> by_bene;
    for (const auto &t : cohort.timelines) by_bene[t.beneficiary.beneficiary_id] = &t;

    std::unordered_map<std::string, Day> admission_of; // claim id -> admission date
    std::vector<double> los_values, payment_values, age_values;
    std::vector<double> obesity_values, smoking_values, income_values;
    for (const auto &t : cohort.timelines) {
        bool in_train = train_benes.count(t.beneficiary.beneficiary_id) > 0;
        for (const auto &c : t.claims) {
            if (c.claim_type == ClaimType::INP) admission_of[c.claim_id] = c.admission_date;
            if (!in_train) continue;
            if (c.admission_date != kNoDate && c.discharge_date != kNoDate)
                los_values.push_back(static_cast<double>(c.discharge_date - c.admission_date));
            payment_values.push_back(c.payment_amount);
        }
        if (in_train) {
            const CountyStats &county = county_of(cohort.census, t.beneficiary.beneficiary_id);
            if (county.known) {
                obesity_values.push_back(county.obesity_rate);
                smoking_values.push_back(county.smoking_rate);
                income_values.push_back(county.median_income);
            }
        }
    }
    for (const auto &ev : cohort.events) {
        if (!train_benes.count(ev.beneficiary_id)) continue;
        auto it = admission_of.find(ev.index_claim_id);
        if (it == admission_of.end())
            throw EventNotInTimeline("labeled event " + ev.index_claim_id +
                                     " has no matching inpatient claim");
        const Beneficiary &b = by_bene.at(ev.beneficiary_id)->beneficiary;
        age_values.push_back(std::floor((it->second - b.date_of_birth) / 365.25));
    }

    QuantizerSpec spec;
    spec.add("los_days", std::move(los_values), cfg.quantizer_bins);
    spec.add("payment_amount", std::move(payment_values), cfg.quantizer_bins);
    spec.add("age_years", std::move(age_values), cfg.quantizer_bins);
    spec.add("obesity_rate", std::move(obesity_values), cfg.quantizer_bins);
    spec.add("smoking_rate", std::move(smoking_values), cfg.quantizer_bins);
    spec.add("median_income", std::move(income_values), cfg.quantizer_bins);

    // vocabulary corpus: assembled token strings of training events only
    std::vector<std::string> corpus;
    for (const auto &ev : cohort.events) {
        if (!train_benes.count(ev.beneficiary_id)) continue;
        const BeneficiaryTimeline &tl = *by_bene.at(ev.beneficiary_id);
        AssembledStrings as = assemble_strings(
            ev, tl, county_of(cohort.census, ev.beneficiary_id), spec, cfg.l_max);
        corpus.insert(corpus.end(), as.tokens.begin(), as.tokens.end());
    }
    Vocabulary vocab = build_vocabulary(corpus, cfg.vocab_cap, cfg.vocab_min_count);

    std::vector<LabeledSample> samples = assemble_all_samples(cohort, vocab, spec, cfg.l_max);

    // compression accounting on the same training slice the vocabulary saw
    std::vector<BeneficiaryTimeline> train_timelines;
    std::set<std::string> train_county_ids;
    for (const auto &t : cohort.timelines)
        if (train_benes.count(t.beneficiary.beneficiary_id)) {
            train_timelines.push_back(t);
            const CountyStats &c = county_of(cohort.census, t.beneficiary.beneficiary_id);
            if (c.known) train_county_ids.insert(c.county_id);
        }
    std::vector<CountyStats> train_counties;
    for (const auto &t : train_timelines) {
        const CountyStats &c = county_of(cohort.census, t.beneficiary.beneficiary_id);
        if (c.known && train_county_ids.erase(c.county_id)) train_counties.push_back(c);
    }
    size_t raw_values = raw_variable_value_count(train_timelines, train_counties);

    fs::create_directories(run_dir + "/prep");
    write_quantizer_file(run_dir + "/prep/quantizers.csv", spec);
    write_vocab_file(run_dir + "/prep/vocab.tsv", vocab);
    write_samples_file(run_dir + "/prep/samples.csv", samples);
    write_label_file(run_dir + "/prep/labels.csv", cohort.events);

    SampleSplits splits = split_samples(samples, cfg.split_seed);
    size_t positives = 0;
    for (const auto &s : samples) positives += (s.label == 1);
    dump_json_file(
        run_dir + "/prep/stats.json",
        {{"n_beneficiaries", cohort.timelines.size()},
         {"n_claims", cohort.summary.total_claims},
         {"n_events", samples.size()},
         {"n_positives", positives},
         {"positive_rate", static_cast<double>(positives) / static_cast<double>(samples.size())},
         {"vocab_size", vocab.size()},
         {"raw_variable_values", raw_values},
         {"compression_ratio", static_cast<double>(raw_values) / static_cast<double>(vocab.size())},
         {"l_max", cfg.l_max},
         {"split_sizes",
          {{"train", splits.train.size()},
           {"validation", splits.validation.size()},
           {"test", splits.test.size()}}}});

    m.record_stage("prep", run_dir,
                   {"prep/quantizers.csv", "prep/vocab.tsv", "prep/samples.csv",
                    "prep/labels.csv", "prep/stats.json"});
    m.save(run_dir);
}

PrepArtifacts load_prep_artifacts(const std::string &run_dir, const PipelineConfig &cfg) {
    RunManifest m = RunManifest::load_or_empty(run_dir);
    m.require_stage("prep", run_dir);
    PrepArtifacts a;
    a.vocab = read_vocab_file(run_dir + "/prep/vocab.tsv");
    a.quantizers = read_quantizer_file(run_dir + "/prep/quantizers.csv");
    a.samples = read_samples_file(run_dir + "/prep/samples.csv");
    a.splits = split_samples(a.samples, cfg.split_seed);
    return a;
}

void run_pretrain(const std::string &run_dir, const PipelineConfig &cfg) {
    PrepArtifacts prep = load_prep_artifacts(run_dir, cfg);
    EncoderConfig enc = encoder_config_for(cfg, prep.vocab);

    EncoderState state = EncoderState::init(enc, cfg.pretrain.seed);
    state.vocab_hash = prep.vocab.content_hash;
    TrainResult result = pretrain_masked(state, prep.samples, prep.splits, cfg.pretrain);

    fs::create_directories(run_dir + "/model");
    save_checkpoint(run_dir + "/model/pretrained.ckpt", state);
    nlohmann::json j = history_json(result);
    j["majority_masked_accuracy"] = majority_masked_accuracy(
        prep.samples, prep.splits.validation, enc.vocab_size, cfg.pretrain);
    dump_json_file(run_dir + "/model/pretrain_history.json", j);

    RunManifest m = RunManifest::load_or_empty(run_dir);
    m.record_stage("pretrain", run_dir,
                   {"model/pretrained.ckpt", "model/pretrain_history.json"});
    m.save(run_dir);
}

void run_finetune(const std::string &run_dir, const PipelineConfig &cfg) {
    PrepArtifacts prep = load_prep_artifacts(run_dir, cfg);
    EncoderConfig enc = encoder_config_for(cfg, prep.vocab);

    EncoderState state;
    if (cfg.finetune_init == "pretrained") {
        RunManifest m = RunManifest::load_or_empty(run_dir);
        m.require_stage("pretrain", run_dir);
        state = load_checkpoint(run_dir + "/model/pretrained.ckpt", prep.vocab.content_hash);
    } else {
        state = EncoderState::init(enc, cfg.finetune.seed);
        state.vocab_hash = prep.vocab.content_hash;
    }
    TrainResult result = finetune_classifier(state, prep.samples, prep.splits, cfg.finetune);

    fs::create_directories(run_dir + "/model");
    save_checkpoint(run_dir + "/model/model.ckpt", state);
    nlohmann::json j = history_json(result);
    j["init"] = cfg.finetune_init;
    dump_json_file(run_dir + "/model/finetune_history.json", j);

    RunManifest m = RunManifest::load_or_empty(run_dir);
    m.record_stage("finetune", run_dir, {"model/model.ckpt", "model/finetune_history.json"});
    m.save(run_dir);
}

EvalReport run_eval(const std::string &run_dir, const PipelineConfig &cfg) {
    PrepArtifacts prep = load_prep_artifacts(run_dir, cfg);
    RunManifest m = RunManifest::load_or_empty(run_dir);
    m.require_stage("finetune", run_dir);
    EncoderState state = load_checkpoint(run_dir + "/model/model.ckpt", prep.vocab.content_hash);

    std::vector<double> val_scores = predict_scores(state, prep.samples, prep.splits.validation);
    std::vector<double> test_scores = predict_scores(state, prep.samples, prep.splits.test);
    EvalReport report = evaluate_split_scores(labels_of(prep.samples, prep.splits.validation),
                                              val_scores,
                                              labels_of(prep.samples, prep.splits.test),
                                              test_scores);
    fs::create_directories(run_dir + "/reports");
    write_eval_report_json(run_dir + "/reports/eval.json", report);
    m.record_stage("eval", run_dir, {"reports/eval.json"});
    m.save(run_dir);
    return report;
}

std::vector<ScalingRow> run_scale(const std::string &run_dir, const PipelineConfig &cfg) {
    PrepArtifacts prep = load_prep_artifacts(run_dir, cfg);
    EncoderConfig enc = encoder_config_for(cfg, prep.vocab);

    // deterministic sample order shared by every size so subsets nest
    std::vector<size_t> order(prep.samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng scale_rng = Rng(cfg.split_seed).derive("scale");
    scale_rng.shuffle(order);

    std::vector<int> test_labels = labels_of(prep.samples, prep.splits.test);
    std::vector<ScalingRow> rows;
    for (int64_t size : cfg.scale_sizes) {
        if (size > static_cast<int64_t>(prep.samples.size()))
            throw InvalidConfig("scale size " + std::to_string(size) + " exceeds the " +
                                std::to_string(prep.samples.size()) + " available events");
        std::vector<char> member(prep.samples.size(), 0);
        for (int64_t i = 0; i < size; ++i) member[order[static_cast<size_t>(i)]] = 1;

        SampleSplits sub;
        for (size_t i : prep.splits.train)
            if (member[i]) sub.train.push_back(i);
        for (size_t i : prep.splits.validation)
            if (member[i]) sub.validation.push_back(i);
        sub.test = prep.splits.test; // shared yardstick across sizes
        if (sub.train.empty() || sub.validation.empty())
            throw TooFewBeneficiaries("scale size " + std::to_string(size) +
                                      " leaves an empty train or validation split");

        EncoderState state = EncoderState::init(enc, cfg.pretrain.seed);
        state.vocab_hash = prep.vocab.content_hash;
        pretrain_masked(state, prep.samples, sub, cfg.pretrain);
        finetune_classifier(state, prep.samples, sub, cfg.finetune);

        std::vector<double> val_scores = predict_scores(state, prep.samples, sub.validation);
        std::vector<double> test_scores = predict_scores(state, prep.samples, sub.test);
        EvalReport r = evaluate_split_scores(labels_of(prep.samples, sub.validation), val_scores,
                                             test_labels, test_scores);
        rows.push_back({size, r.test.auc, r.test.sensitivity, r.test.specificity, r.test.gmean});
    }

    fs::create_directories(run_dir + "/reports");
    write_scaling_csv(run_dir + "/reports/scaling.csv", rows);
    RunManifest m = RunManifest::load_or_empty(run_dir);
    m.record_stage("scale", run_dir, {"reports/scaling.csv"});
    m.save(run_dir);
    return rows;
}

DriftReport run_drift(const std::string &run_dir, const PipelineConfig &cfg) {
    PrepArtifacts prep = load_prep_artifacts(run_dir, cfg);
    RunManifest m = RunManifest::load_or_empty(run_dir);
    m.require_stage("finetune", run_dir);
    EncoderState state = load_checkpoint(run_dir + "/model/model.ckpt", prep.vocab.content_hash);

    // regenerate the same cohort with a fraction of diagnosis codes remapped,
    // then tokenize with the ORIGINAL quantizers and vocabulary: the model
    // faces the new code mix exactly as a deployed system would
    CohortConfig shifted_cfg = cfg.cohort;
    shifted_cfg.shift_strength = cfg.drift_shift_strength;
    Cohort shifted = generate_cohort(shifted_cfg);
    LoadedCohort loaded;
    loaded.beneficiaries = std::move(shifted.beneficiaries);
    loaded.counties = std::move(shifted.counties);
    loaded.claims = std::move(shifted.claims);
    AssembledCohort cohort = assemble_cohort(std::move(loaded));
    std::vector<LabeledSample> shifted_samples =
        assemble_all_samples(cohort, prep.vocab, prep.quantizers, cfg.l_max);

    SampleSplits shifted_splits = split_samples(shifted_samples, cfg.split_seed);

    std::vector<double> base_scores = predict_scores(state, prep.samples, prep.splits.test);
    std::vector<double> shift_scores =
        predict_scores(state, shifted_samples, shifted_splits.test);

    DriftReport report;
    report.baseline_auc = roc_auc(labels_of(prep.samples, prep.splits.test), base_scores);
    report.shifted_auc =
        roc_auc(labels_of(shifted_samples, shifted_splits.test), shift_scores);
    report.drop = report.baseline_auc - report.shifted_auc;
    report.threshold = cfg.drift_threshold;
    report.shift_strength = cfg.drift_shift_strength;
    report.flagged = report.drop > cfg.drift_threshold;

    fs::create_directories(run_dir + "/reports");
    dump_json_file(run_dir + "/reports/drift.json",
                   {{"baseline_auc", report.baseline_auc},
                    {"shifted_auc", report.shifted_auc},
                    {"drop", report.drop},
                    {"threshold", report.threshold},
                    {"shift_strength", report.shift_strength},
                    {"flagged", report.flagged}});
    m.record_stage("drift", run_dir, {"reports/drift.json"});
    m.save(run_dir);
    return report;
}

void run_explain(const std::string &run_dir, const PipelineConfig &cfg,
                 const std::string &beneficiary) {
    PrepArtifacts prep = load_prep_artifacts(run_dir, cfg);
    RunManifest m = RunManifest::load_or_empty(run_dir);
    m.require_stage("finetune", run_dir);
    EncoderState state = load_checkpoint(run_dir + "/model/model.ckpt", prep.vocab.content_hash);

    // most recent labeled admission of this beneficiary (samples are written
    // in timeline order)
    const LabeledSample *chosen = nullptr;
    for (const auto &s : prep.samples)
        if (s.beneficiary_id == beneficiary) chosen = &s;
    if (!chosen)
        throw UnknownBeneficiary(beneficiary + " has no labeled admissions in this run");

    EncoderBoundT<float> bound = bind(static_cast<TapeT<float> *>(nullptr), state);
    Rng rng(0);
    auto out = encode(static_cast<TapeT<float> *>(nullptr), bound, chosen->tokens,
                      chosen->segment_ids, chosen->time_bucket_ids, rng, /*training=*/false);
    AttentionExplanation ex = explain_attention(out, chosen->tokens, prep.vocab);

    fs::create_directories(run_dir + "/reports");
    std::string html_rel = "reports/explain_" + beneficiary + ".html";
    std::string json_rel = "reports/explain_" + beneficiary + ".json";
    write_attention_html(run_dir + "/" + html_rel, beneficiary, ex);
    write_attention_json(run_dir + "/" + json_rel, beneficiary, ex);
    m.record_stage("explain", run_dir, {html_rel, json_rel});
    m.save(run_dir);
}

AuditOutput run_audit(const std::string &run_dir, const PipelineConfig &cfg) {
    PrepArtifacts prep = load_prep_artifacts(run_dir, cfg);
    RunManifest m = RunManifest::load_or_empty(run_dir);
    m.require_stage("finetune", run_dir);
    EncoderState state = load_checkpoint(run_dir + "/model/model.ckpt", prep.vocab.content_hash);

    std::vector<double> val_scores = predict_scores(state, prep.samples, prep.splits.validation);
    OperatingPoint op =
        select_threshold(labels_of(prep.samples, prep.splits.validation), val_scores);

    std::vector<double> test_scores = predict_scores(state, prep.samples, prep.splits.test);
    std::vector<int> test_labels = labels_of(prep.samples, prep.splits.test);
    std::vector<std::string> race_tags, gender_tags;
    for (size_t i : prep.splits.test) {
        race_tags.push_back(prep.samples[i].race);
        gender_tags.push_back(prep.samples[i].gender);
    }
    BiasAuditReport base_race = bias_audit("race", race_tags, test_labels, test_scores, op.threshold);
    BiasAuditReport base_gender =
        bias_audit("gender", gender_tags, test_labels, test_scores, op.threshold);

    // full retrain with race/gender tokens hidden - the whole training pipeline
    // (pretraining included when the base model used it) reruns on the masked
    // data, and the result is audited at its own validation threshold
    std::vector<LabeledSample> masked = mask_demographic_tokens(prep.samples, prep.vocab);
    EncoderConfig enc = encoder_config_for(cfg, prep.vocab);
    EncoderState masked_state;
    TrainResult masked_pretrain;
    if (cfg.finetune_init == "pretrained") {
        masked_state = EncoderState::init(enc, cfg.pretrain.seed);
        masked_state.vocab_hash = prep.vocab.content_hash;
        masked_pretrain = pretrain_masked(masked_state, masked, prep.splits, cfg.pretrain);
    } else {
        masked_state = EncoderState::init(enc, cfg.finetune.seed);
        masked_state.vocab_hash = prep.vocab.content_hash;
    }
    TrainResult retrain = finetune_classifier(masked_state, masked, prep.splits, cfg.finetune);

    std::vector<double> masked_val = predict_scores(masked_state, masked, prep.splits.validation);
    OperatingPoint masked_op =
        select_threshold(labels_of(prep.samples, prep.splits.validation), masked_val);
    std::vector<double> masked_test = predict_scores(masked_state, masked, prep.splits.test);

    AuditOutput out;
    out.race = compare_audits(
        base_race, bias_audit("race", race_tags, test_labels, masked_test, masked_op.threshold));
    out.gender = compare_audits(
        base_gender,
        bias_audit("gender", gender_tags, test_labels, masked_test, masked_op.threshold));
    out.masked_retrain = retrain;

    // per-variable share of test samples where the family ranks in the top 3
    // by final-layer CLS attention of the base model
    EncoderBoundT<float> bound = bind(static_cast<TapeT<float> *>(nullptr), state);
    std::vector<std::vector<VariableAttention>> per_sample;
    per_sample.reserve(prep.splits.test.size());
    Rng rng(0);
    for (size_t i : prep.splits.test) {
        const LabeledSample &s = prep.samples[i];
        auto enc_out = encode(static_cast<TapeT<float> *>(nullptr), bound, s.tokens,
                              s.segment_ids, s.time_bucket_ids, rng, /*training=*/false);
        per_sample.push_back(explain_attention(enc_out, s.tokens, prep.vocab).variables);
    }
    out.attention = top_variable_shares(per_sample, kAuditTopK);

    fs::create_directories(run_dir + "/reports");
    fs::create_directories(run_dir + "/model");
    save_checkpoint(run_dir + "/model/demographics_masked.ckpt", masked_state);
    write_bias_comparison_json(run_dir + "/reports/audit_race.json", out.race);
    write_bias_comparison_json(run_dir + "/reports/audit_gender.json", out.gender);
    write_variable_share_json(run_dir + "/reports/audit_attention.json", out.attention,
                              kAuditTopK, prep.splits.test.size());
    nlohmann::json retrain_j{{"finetune", history_json(retrain)}};
    if (cfg.finetune_init == "pretrained") retrain_j["pretrain"] = history_json(masked_pretrain);
    dump_json_file(run_dir + "/reports/audit_retrain.json", retrain_j);
    m.record_stage("audit", run_dir,
                   {"reports/audit_race.json", "reports/audit_gender.json",
                    "reports/audit_attention.json", "reports/audit_retrain.json",
                    "model/demographics_masked.ckpt"});
    m.save(run_dir);
    return out;
}

} // namespace readmit
