#include "omnifuse/train/trainer.hpp"

#include <chrono>
#include <iostream>
#include <map>

#include "omnifuse/data/tokenizer.hpp"

namespace omnifuse::train {

namespace {

// Every stochastic draw is keyed by (seed, stream, phase/purpose, epoch,
// batch), so an interrupted run resumed from a checkpoint replays the exact
// same shuffles and masks as the uninterrupted one.
constexpr std::uint64_t kStreamShuffle = 0x73687566;
constexpr std::uint64_t kStreamMask = 0x6d61736b;
constexpr std::uint64_t kStreamLabels = 0x6c616273;

constexpr std::uint64_t kPurposeTrain = 0;
constexpr std::uint64_t kPurposeVal = 1;
constexpr std::uint64_t kPhaseFinetune = 2;

std::uint64_t mask_seed(std::uint64_t seed, std::uint64_t purpose, int epoch, int batch) {
    return Rng::derive(seed, {kStreamMask, purpose, static_cast<std::uint64_t>(epoch),
                              static_cast<std::uint64_t>(batch)})
        .next_u64();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<data::ModalitySpec> specs_for(const data::DatasetManifest& man,
                                          const OmniModel<float>& m,
                                          const std::vector<std::string>& subset) {
    std::vector<std::string> names;
    if (subset.empty()) {
        for (const auto& ms : m.mods) names.push_back(ms.name);
    } else {
        for (const auto& n : subset) m.modality_index(n);  // throws on unknown
        names = subset;
    }
    std::vector<data::ModalitySpec> out;
    out.reserve(names.size());
    for (const auto& n : names) out.push_back(man.modality(n));
    return out;
}

using TileMap = std::map<std::string, data::MultimodalTile>;

TileMap load_tiles(const data::TileAccessor& acc, const std::vector<std::string>& ids) {
    TileMap out;
    for (const auto& id : ids)
        if (out.find(id) == out.end()) out.emplace(id, acc.load(id));
    return out;
}

std::vector<data::MultimodalTile> batch_tiles(const TileMap& tiles,
                                              const std::vector<std::string>& order,
                                              std::size_t begin, std::size_t count) {
    std::vector<data::MultimodalTile> out;
    for (std::size_t i = begin; i < begin + count && i < order.size(); ++i)
        out.push_back(tiles.at(order[i]));
    return out;
}

std::vector<float> target_matrix(const std::vector<std::string>& tile_order, const TileMap& tiles,
                                 int n_classes) {
    std::vector<float> t;
    t.reserve(tile_order.size() * static_cast<std::size_t>(n_classes));
    for (const auto& id : tile_order) {
        const auto& lab = tiles.at(id).labels();
        check(static_cast<int>(lab.size()) == n_classes,
              "labels for tile " + id + " do not match the class count");
        for (std::uint8_t b : lab) t.push_back(b ? 1.0f : 0.0f);
    }
    return t;
}

struct PretrainEpochStats {
    double total = 0, con = 0, mae = 0;
};

PretrainEpochStats run_pretrain_batches(OmniModel<float>& m, const TileMap& tiles,
                                        const std::vector<std::string>& order,
                                        const std::vector<data::ModalitySpec>& specs, int epoch,
                                        std::uint64_t purpose, Adam<float>* adam, double lr,
                                        int* rejected) {
    const std::size_t bt = static_cast<std::size_t>(m.cfg.batch_tiles);
    PretrainEpochStats s;
    int nb = 0;
    for (std::size_t pos = 0; pos < order.size(); pos += bt, ++nb) {
        auto chunk = batch_tiles(tiles, order, pos, bt);
        auto batch = data::assemble_batch(chunk, specs);
        nn::Graph<float> g;
        if (!adam) g.set_inference(true);
        auto loss = build_pretrain_loss(g, m, batch, mask_seed(m.cfg.seed, purpose, epoch, nb));
        if (adam) {
            m.reg.zero_grads();
            g.backward(loss.total);
            std::string diag;
            if (!adam->step(m.reg.items(), lr, &diag)) {
                ++*rejected;
                std::cerr << diag << "\n";
            }
        }
        s.total += loss.total.scalar();
        s.con += loss.con.scalar();
        s.mae += loss.mae.scalar();
    }
    check(nb > 0, "training: empty tile list");
    s.total /= nb;
    s.con /= nb;
    s.mae /= nb;
    return s;
}

// Mean BCE over a split; when counts is set, also thresholds the logits at
// zero (sigmoid 0.5) and accumulates per-class confusion totals.
double supervised_eval(OmniModel<float>& m, const TileMap& tiles,
                       const std::vector<std::string>& ids,
                       const std::vector<data::ModalitySpec>& specs, F1Counts* counts) {
    const std::size_t bt = static_cast<std::size_t>(m.cfg.batch_tiles);
    double bce = 0;
    int nb = 0;
    for (std::size_t pos = 0; pos < ids.size(); pos += bt, ++nb) {
        auto chunk = batch_tiles(tiles, ids, pos, bt);
        auto batch = data::assemble_batch(chunk, specs);
        nn::Graph<float> g;
        g.set_inference(true);
        auto sup = supervised_logits(g, m, batch);
        auto targets = target_matrix(sup.tile_order, tiles, m.n_classes);
        bce += nn::bce_with_logits_mean(g, sup.logits,
                                        g.leaf({static_cast<int>(sup.tile_order.size()),
                                                m.n_classes},
                                               targets))
                   .scalar();
        if (counts) {
            const auto& lv = sup.logits.n->val;
            for (std::size_t ti = 0; ti < sup.tile_order.size(); ++ti) {
                std::vector<std::uint8_t> truth(m.n_classes), pred(m.n_classes);
                for (int c = 0; c < m.n_classes; ++c) {
                    truth[c] = targets[ti * m.n_classes + c] > 0.5f ? 1 : 0;
                    pred[c] = lv[ti * m.n_classes + c] >= 0.0f ? 1 : 0;
                }
                counts->add(truth, pred);
            }
        }
    }
    check(nb > 0, "evaluation: empty tile list");
    return bce / nb;
}

}  // namespace

std::vector<std::string> label_subset(const std::vector<std::string>& ids, double fraction,
                                      std::uint64_t seed) {
    check(fraction > 0 && fraction <= 1, "label fraction outside (0, 1]");
    if (fraction == 1.0) return ids;
    auto order = ids;
    Rng rng = Rng::derive(seed, {kStreamLabels});
    rng.shuffle(order);
    const std::size_t n = static_cast<std::size_t>(fraction * static_cast<double>(ids.size()));
    check(n >= 1, "label fraction " + std::to_string(fraction) + " selects no tiles (split has " +
                      std::to_string(ids.size()) + ")");
    order.resize(n);
    return order;
}

std::unique_ptr<OmniModel<float>> build_model(const TrainConfig& cfg, data::TileAccessor acc) {
    cfg.validate();
    const auto& man = acc.manifest();
    check(!man.tiles.empty(), "build model: dataset has no tiles");
    check(!man.label_vocab.empty(), "build model: dataset has no label vocabulary");

    std::vector<std::string> names = cfg.modalities;
    if (names.empty())
        for (const auto& s : man.modalities) names.push_back(s.name);
    std::vector<data::ModalitySpec> specs;
    for (const auto& n : names) specs.push_back(man.modality(n));

    acc.set_pretrain_mode(true);  // geometry probing must not need labels
    const std::string sample_id = man.has_split("train") && !man.split("train").empty()
                                      ? man.split("train")[0]
                                      : man.tiles[0].tile_id;
    const auto tile = acc.load(sample_id);
    const auto batch = data::tokenize(tile, specs);
    auto shapes = modality_shapes(man, names, batch);

    TrainConfig full = cfg;
    full.modalities = names;
    auto m = std::make_unique<OmniModel<float>>();
    m->init(full, std::move(shapes), static_cast<int>(man.label_vocab.size()), tile.gx, tile.gy,
            man.grid_cell_m);
    return m;
}

FitResult pretrain(OmniModel<float>& m, data::TileAccessor acc, const FitOptions& opt) {
    m.cfg.validate();
    acc.set_pretrain_mode(true);
    const auto& man = acc.manifest();
    const auto specs = specs_for(man, m, {});
    if (m.cfg.contrastive != "off")
        check(specs.size() >= 2, "pretrain: contrastive objective needs at least two modalities");
    const auto& train_ids = man.split("train");
    const auto& val_ids = man.split("val");
    check(!train_ids.empty(), "pretrain: train split is empty");
    check(!val_ids.empty(), "pretrain: val split is empty");
    auto all_ids = train_ids;
    all_ids.insert(all_ids.end(), val_ids.begin(), val_ids.end());
    const TileMap tiles = load_tiles(acc, all_ids);

    Adam<float> adam;
    adam.t = opt.resume.adam_t;
    ReduceLROnPlateau sched{m.cfg.scheduler_patience, m.cfg.scheduler_decay};
    sched.best = opt.resume.sched_best;
    sched.bad = opt.resume.sched_bad;
    double lr = opt.resume.lr > 0 ? opt.resume.lr : m.cfg.pretrain_lr;
    int stall = opt.resume.stall;

    FitResult res;
    res.state = opt.resume;
    MetricsLog log(opt.metrics_path, opt.resume.epoch > 0);
    for (int epoch = opt.resume.epoch; epoch < m.cfg.pretrain_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        auto order = train_ids;
        Rng shuffle_rng =
            Rng::derive(m.cfg.seed, {kStreamShuffle, kPurposeTrain, static_cast<std::uint64_t>(epoch)});
        shuffle_rng.shuffle(order);
        const auto tr = run_pretrain_batches(m, tiles, order, specs, epoch, kPurposeTrain, &adam,
                                             lr, &res.rejected_steps);
        const auto va =
            run_pretrain_batches(m, tiles, val_ids, specs, epoch, kPurposeVal, nullptr, lr, nullptr);

        const auto r = sched.observe(va.total, lr);
        log.add({epoch, "pretrain", tr.total, tr.con, tr.mae, lr, 0, 0, 0, seconds_since(t0)});
        if (r.improved) {
            stall = 0;
            res.state = {epoch + 1, adam.t, r.lr, sched.best, sched.bad, stall};
            if (!opt.checkpoint_path.empty()) save_checkpoint(m, res.state, opt.checkpoint_path);
        } else {
            ++stall;
            res.state = {epoch + 1, adam.t, r.lr, sched.best, sched.bad, stall};
        }
        lr = r.lr;
        if (opt.verbose)
            std::cerr << "pretrain epoch " << epoch << " train " << tr.total << " val " << va.total
                      << " lr " << lr << "\n";
        if (stall >= m.cfg.early_stop) break;
    }
    res.history = log.records();
    return res;
}

FitResult finetune(OmniModel<float>& m, data::TileAccessor acc,
                   const std::vector<std::string>& modality_subset, const FitOptions& opt,
                   bool head_only) {
    m.cfg.validate();
    acc.set_pretrain_mode(false);
    const auto& man = acc.manifest();
    check(static_cast<int>(man.label_vocab.size()) == m.n_classes,
          "finetune: label vocabulary does not match the model head");
    const auto specs = specs_for(man, m, modality_subset);
    const auto& train_ids = man.split("train");
    const auto& val_ids = man.split("val");
    check(!train_ids.empty(), "finetune: train split is empty");
    check(!val_ids.empty(), "finetune: val split is empty");
    const auto labeled = label_subset(train_ids, m.cfg.label_fraction, m.cfg.seed);
    auto all_ids = labeled;
    all_ids.insert(all_ids.end(), val_ids.begin(), val_ids.end());
    const TileMap tiles = load_tiles(acc, all_ids);

    if (head_only) m.freeze_backbone(true);

    Adam<float> adam;
    adam.t = opt.resume.adam_t;
    // A fresh phase gets a fresh optimizer: moments loaded from a pretraining
    // checkpoint describe the old objective and must not steer the first
    // supervised steps. Resumes (adam_t > 0) keep them for bit-exactness.
    if (adam.t == 0)
        for (auto* p : m.reg.items()) {
            std::fill(p->m.begin(), p->m.end(), 0.0f);
            std::fill(p->v.begin(), p->v.end(), 0.0f);
        }
    ReduceLROnPlateau sched{m.cfg.scheduler_patience, m.cfg.scheduler_decay};
    sched.best = opt.resume.sched_best;
    sched.bad = opt.resume.sched_bad;
    double lr = opt.resume.lr > 0 ? opt.resume.lr : m.cfg.finetune_lr;
    int stall = opt.resume.stall;

    // Early stopping returns the best-validation parameters, not the last.
    std::vector<std::vector<float>> best_values;
    const std::size_t bt = static_cast<std::size_t>(m.cfg.batch_tiles);

    FitResult res;
    res.state = opt.resume;
    MetricsLog log(opt.metrics_path, opt.resume.epoch > 0);
    for (int epoch = opt.resume.epoch; epoch < m.cfg.finetune_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        auto order = labeled;
        Rng shuffle_rng = Rng::derive(m.cfg.seed,
                                      {kStreamShuffle, kPhaseFinetune, static_cast<std::uint64_t>(epoch)});
        shuffle_rng.shuffle(order);

        double train_bce = 0;
        int nb = 0;
        for (std::size_t pos = 0; pos < order.size(); pos += bt, ++nb) {
            auto chunk = batch_tiles(tiles, order, pos, bt);
            auto batch = data::assemble_batch(chunk, specs);
            nn::Graph<float> g;
            auto sup = supervised_logits(g, m, batch);
            auto targets = target_matrix(sup.tile_order, tiles, m.n_classes);
            auto loss = nn::bce_with_logits_mean(
                g, sup.logits,
                g.leaf({static_cast<int>(sup.tile_order.size()), m.n_classes}, targets));
            m.reg.zero_grads();
            g.backward(loss);
            std::string diag;
            if (!adam.step(m.reg.items(), lr, &diag)) {
                ++res.rejected_steps;
                std::cerr << diag << "\n";
            }
            train_bce += loss.scalar();
        }
        train_bce /= std::max(nb, 1);

        F1Counts counts(m.n_classes);
        const double val_bce = supervised_eval(m, tiles, val_ids, specs, &counts);

        const auto r = sched.observe(val_bce, lr);
        log.add({epoch, head_only ? "probe" : "finetune", train_bce, 0, 0, lr, counts.weighted(),
                 counts.macro(), counts.micro(), seconds_since(t0)});
        if (r.improved) {
            stall = 0;
            best_values.clear();
            for (const auto* p : m.reg.items()) best_values.push_back(p->value);
            res.state = {epoch + 1, adam.t, r.lr, sched.best, sched.bad, stall};
            if (!opt.checkpoint_path.empty()) save_checkpoint(m, res.state, opt.checkpoint_path);
        } else {
            ++stall;
            res.state = {epoch + 1, adam.t, r.lr, sched.best, sched.bad, stall};
        }
        lr = r.lr;
        if (opt.verbose)
            std::cerr << (head_only ? "probe" : "finetune") << " epoch " << epoch << " train "
                      << train_bce << " val " << val_bce << " f1w " << counts.weighted() << "\n";
        if (stall >= m.cfg.early_stop) break;
    }

    if (!best_values.empty())
        for (std::size_t i = 0; i < m.reg.items().size(); ++i)
            m.reg.items()[i]->value = best_values[i];
    if (head_only) m.freeze_backbone(false);

    res.history = log.records();
    return res;
}

EvalResult evaluate(OmniModel<float>& m, data::TileAccessor acc, const std::string& split,
                    const std::vector<std::string>& modality_subset) {
    acc.set_pretrain_mode(false);
    const auto& man = acc.manifest();
    check(static_cast<int>(man.label_vocab.size()) == m.n_classes,
          "evaluate: label vocabulary does not match the model head");
    const auto& ids = man.split(split);
    check(!ids.empty(), "evaluate: split " + split + " is empty");
    const auto specs = specs_for(man, m, modality_subset);
    const TileMap tiles = load_tiles(acc, ids);

    EvalResult out;
    out.counts.reset(m.n_classes);
    out.bce = supervised_eval(m, tiles, ids, specs, &out.counts);
    return out;
}

}  // namespace omnifuse::train
