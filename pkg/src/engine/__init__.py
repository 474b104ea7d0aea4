"""Engine: orchestrator, frozen tasks and the simulate/init/refine/sweep pipelines."""
