# Text representation package
