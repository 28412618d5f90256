"""Multimodal ICU deterioration risk prediction pipeline.

Subpackages and modules:
    ingest     -- MIMIC-shaped CSV parsing, cohort selection, outcome extraction
    channels   -- the fixed 26-channel feature map (10 vitals + 16 labs)
    featurize  -- hourly aggregation, capped forward-fill imputation, z-scoring
    sampling   -- hourly sample enumeration, labeling, note attachment, splits
    nn         -- dense numeric core with hand-derived backward passes + AdamW
    model      -- BiLSTM+attention encoder, text projection, gated fusion, classifier
    training   -- focal loss with label smoothing, LR schedule, epoch loop
    metrics    -- AUROC/AUPRC/Brier/ECE, thresholding, temperature scaling, strata
    baseline   -- logistic regression over window summary statistics
    synth      -- seeded synthetic cohort generator with plantable signal
    cli        -- pipeline subcommands
"""

__version__ = "0.1.0"
