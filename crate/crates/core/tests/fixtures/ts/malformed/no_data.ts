@problemName Empty
@classLabel true a b
