# Services: training, optimizer, evaluation
