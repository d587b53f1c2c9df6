"""
Services de construction du U-Net et des plans de gel
"""
