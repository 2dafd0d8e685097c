"""Block pruning of small feed-forward networks with attention masks and
phase schedules, plus magnitude, ACDC and Powerpropagation baselines."""
