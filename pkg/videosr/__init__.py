"""Multi-frame video super resolution with infimal-convolution regularisation."""
