"""RSSI-guided grid search for LoRa tags.

Library layout:

* grid       -- coordinates, actions, reward, seeded random streams
* sites      -- per-cell RSSI histograms (synthetic generation, ingestion, IO)
* env        -- the episode engine (observation draws, compliance, convergence)
* features   -- agent-centered signal / variation / visibility maps
* nnet       -- conv + dense network with exact reverse-mode gradients, Adam
* policy     -- exploration bonus, action selection, three-term loss trainer
* baselines  -- spiral, ranging, simplex, Robbins-Monro, alt exploration rules
* evaluate   -- success rate, efficiency, sweeps, multi-agent case study
* cli        -- gen-site / ingest / train / eval / sweep commands
"""

__version__ = "0.1.0"
