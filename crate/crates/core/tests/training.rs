//! Training on generated cohorts, without the language-model stages.

use std::collections::HashMap;

use ehr_rag::ehr::{generate_synthetic_cohort, split_cohort, SplitRatios, SyntheticConfig, Task};
use ehr_rag::gateway::doubles::HashEmbedder;
use ehr_rag::gateway::EmbedBackend;
use ehr_rag::summarizer::NONE_SUMMARY;
use ehr_rag::train::{
    build_dataset, fit, grid_search, Dataset, TextInputs, TrainingConfig, Variant,
};

/// Note text embedded for the note input; the summary input reads "None".
fn dataset(n_patients: usize, seed: u64) -> Dataset {
    let cfg = SyntheticConfig {
        n_patients,
        ..SyntheticConfig::default()
    };
    let (records, _) = generate_synthetic_cohort(&cfg, seed).unwrap();
    let split = split_cohort(&records, SplitRatios::default(), seed).unwrap();
    let embed = HashEmbedder::with_seed(32, 1);
    let none = embed.embed(NONE_SUMMARY).unwrap();
    let text: HashMap<String, TextInputs> = records
        .iter()
        .map(|p| {
            let note = if p.note.is_empty() {
                NONE_SUMMARY
            } else {
                p.note.text.as_str()
            };
            (
                p.id.clone(),
                TextInputs {
                    note: embed.embed(note).unwrap(),
                    rag: none.clone(),
                },
            )
        })
        .collect();
    build_dataset(&split, Task::Mortality, &text).unwrap()
}

#[test]
fn loss_falls_over_first_epochs() {
    let mut falling = 0;
    for seed in 0..10 {
        let data = dataset(800, 100 + seed);
        let cfg = TrainingConfig {
            max_epochs: 5,
            patience: 4,
            seed,
            ..TrainingConfig::default()
        };
        // patience can end the run early; only full runs count as evidence
        let out = fit(&data, &cfg, Variant::default(), 1e-3, 32).unwrap();
        let losses: Vec<f64> = out.history.iter().map(|h| h.train_loss).collect();
        if losses.len() == 5 && losses.windows(2).all(|w| w[1] < w[0]) {
            falling += 1;
        }
    }
    assert!(
        falling >= 9,
        "loss fell monotonically in {falling}/10 seeds"
    );
}

#[test]
fn full_grid_selects_its_best_cell() {
    let data = dataset(500, 7);
    let cfg = TrainingConfig::default();
    let g = grid_search(&cfg.lr_grid, &cfg.hidden_grid, |c| {
        let out = fit(&data, &cfg, Variant::default(), c.lr, c.d)?;
        Ok((out.best_score, ()))
    })
    .unwrap();
    assert_eq!(g.cells.len(), 12);
    for (cell, score) in &g.cells {
        let score = score
            .as_ref()
            .unwrap_or_else(|e| panic!("{cell:?} failed: {e}"));
        assert!(
            g.best_score >= *score,
            "{cell:?} scored {score} above the selected {}",
            g.best_score
        );
    }
}
